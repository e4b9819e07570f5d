mod common;

use common::{oracle_mismatch, random_graph, random_query};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn hundred_random_graphs_match_brute_force() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for _ in 0..100 {
        let g = random_graph(&mut rng, 200);
        assert!(g.len() <= 200);
        assert_eq!(oracle_mismatch(&g, &mut rng), None);
    }
}

#[test]
fn bad_threshold_and_unknown_id_are_errors() {
    let g = random_graph(&mut StdRng::seed_from_u64(1), 20);
    let id = g.nodes()[0].id.clone();
    assert!(g.similarity_neighbors(&id, 1.5, 3).is_err());
    assert!(g.community_of(&id, -0.1).is_err());
    assert!(g.similarity_neighbors("no-such-node", 0.5, 3).is_err());
    assert!(g.community_of("no-such-node", 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_results_are_prefixes(seed in any::<u64>(), k in 0usize..20) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 60);
        let q = random_query(&mut rng);
        let long = g.search(&q, k + 5);
        let short = g.search(&q, k);
        prop_assert_eq!(&long[..short.len()], &short[..]);
        prop_assert!(long.iter().all(|h| h.score > 0));
    }

    #[test]
    fn similarity_is_symmetric(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let g = random_graph(&mut StdRng::seed_from_u64(seed), 60);
        for n in g.nodes() {
            for (m, w) in g.similarity_neighbors(&n.id, t, usize::MAX).unwrap() {
                prop_assert!(m.kind == n.kind);
                let back = g.similarity_neighbors(&m.id, t, usize::MAX).unwrap();
                prop_assert!(back.iter().any(|(x, wb)| x.id == n.id && *wb == w));
                prop_assert_eq!(g.similarity(&n.id, &m.id), Some(w));
            }
        }
    }

    #[test]
    fn communities_shrink_as_threshold_rises(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let g = random_graph(&mut StdRng::seed_from_u64(seed), 60);
        for n in g.nodes() {
            let wide = g.community_of(&n.id, lo).unwrap();
            let narrow = g.community_of(&n.id, hi).unwrap();
            prop_assert!(narrow.contains(n.id.as_str()));
            prop_assert!(narrow.is_subset(&wide));
            for m in &narrow {
                prop_assert_eq!(&g.community_of(m, hi).unwrap(), &narrow);
            }
        }
    }
}
