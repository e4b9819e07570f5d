//! Search, taxonomy, neighbors and communities on the bundled course graph.
//!
//! ```text
//! cargo run -p pathchat-core --example kg_queries -- "pandas grouping"
//! ```

use pathchat_core::kg::{sample_graph, NodeKind, DEFAULT_SIMILARITY_THRESHOLD};

fn main() {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data visualization".into());
    let g = sample_graph();

    println!("search {query:?}:");
    for hit in g.search(&query, 5) {
        println!("  {:>2}  {:<24} {}", hit.score, hit.node.id, hit.node.title);
    }

    let Some(top) = g.search(&query, 1).first().map(|h| h.node.clone()) else {
        println!("no match");
        return;
    };
    if top.kind == NodeKind::Material {
        let [course, topic, material] = g
            .taxonomy_path(&top.id)
            .expect("material has a parent chain");
        println!(
            "\ntaxonomy: {} > {} > {}",
            course.title, topic.title, material.title
        );
    }

    println!(
        "\nneighbors of {} (weight >= {DEFAULT_SIMILARITY_THRESHOLD}):",
        top.id
    );
    for (n, w) in g
        .similarity_neighbors(&top.id, DEFAULT_SIMILARITY_THRESHOLD, 10)
        .unwrap()
    {
        println!("  {w:.2}  {}", n.title);
    }

    let community = g
        .community_of(&top.id, DEFAULT_SIMILARITY_THRESHOLD)
        .unwrap();
    println!(
        "\ncommunity ({} nodes): {}",
        community.len(),
        community.into_iter().collect::<Vec<_>>().join(", ")
    );
}
