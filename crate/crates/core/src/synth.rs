//! Seeded synthetic knowledge graphs for load tests and benchmarks.

use std::collections::{BTreeMap, HashSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::kg::{EdgeKind, KgEdge, KgNode, KnowledgeGraph, LearningPath, MetaValue, NodeKind};

const VOCABULARY: &[&str] = &[
    "data",
    "analysis",
    "statistics",
    "python",
    "health",
    "records",
    "privacy",
    "visualization",
    "database",
    "regression",
    "sampling",
    "imaging",
    "ethics",
    "clinical",
    "machine",
    "learning",
    "networks",
    "modeling",
    "survey",
    "pandas",
    "sql",
    "charts",
    "signals",
    "genomics",
];

const DOMAINS: &[&str] = &["computer science", "health", "mathematics", "engineering"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub courses: usize,
    pub topics_per_course: usize,
    pub materials_per_topic: usize,
    /// Similarity edges drawn per material, to other materials.
    pub material_similarity_degree: usize,
    /// Similarity edges drawn per course, to other courses.
    pub course_similarity_degree: usize,
}

impl SynthSpec {
    /// Node count the spec produces.
    pub fn node_count(&self) -> usize {
        self.courses * (1 + self.topics_per_course * (1 + self.materials_per_topic))
    }

    /// About `n` nodes with 4 topics per course and 10 materials per topic.
    pub fn with_nodes(n: usize) -> Self {
        let per_course = 1 + 4 * (1 + 10);
        Self {
            courses: n.div_ceil(per_course).max(1),
            topics_per_course: 4,
            materials_per_topic: 10,
            material_similarity_degree: 3,
            course_similarity_degree: 3,
        }
    }
}

fn title(rng: &mut StdRng, prefix: &str, i: usize) -> String {
    let a = VOCABULARY[rng.gen_range(0..VOCABULARY.len())];
    let b = VOCABULARY[rng.gen_range(0..VOCABULARY.len())];
    format!("{prefix} {i} {a} {b}")
}

/// Builds a valid graph for `spec`. Equal seeds give equal graphs.
pub fn synthetic_graph(spec: SynthSpec, seed: u64) -> KnowledgeGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(spec.node_count());
    let mut edges = Vec::new();
    let mut courses = Vec::new();
    let mut materials = Vec::new();

    for c in 0..spec.courses {
        let course_id = format!("c{c}");
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "description".into(),
            MetaValue::Text(title(&mut rng, "Course about", c)),
        );
        metadata.insert(
            "domain".into(),
            MetaValue::List(vec![DOMAINS[rng.gen_range(0..DOMAINS.len())].to_string()]),
        );
        nodes.push(KgNode {
            id: course_id.clone(),
            kind: NodeKind::Course,
            title: title(&mut rng, "Course", c),
            metadata,
        });
        courses.push(course_id.clone());
        for t in 0..spec.topics_per_course {
            let topic_id = format!("c{c}t{t}");
            nodes.push(KgNode {
                id: topic_id.clone(),
                kind: NodeKind::Topic,
                title: title(&mut rng, "Topic", t),
                metadata: BTreeMap::new(),
            });
            edges.push(KgEdge {
                src: course_id.clone(),
                dst: topic_id.clone(),
                kind: EdgeKind::Contains,
                weight: 1.0,
            });
            for m in 0..spec.materials_per_topic {
                let material_id = format!("c{c}t{t}m{m}");
                let mut metadata = BTreeMap::new();
                metadata.insert(
                    "format".into(),
                    MetaValue::Text(["video", "text", "notebook"][m % 3].into()),
                );
                nodes.push(KgNode {
                    id: material_id.clone(),
                    kind: NodeKind::Material,
                    title: title(&mut rng, "Material", m),
                    metadata,
                });
                edges.push(KgEdge {
                    src: topic_id.clone(),
                    dst: material_id.clone(),
                    kind: EdgeKind::Contains,
                    weight: 1.0,
                });
                materials.push(material_id);
            }
        }
    }

    let similar = |pool: &[String], degree: usize, rng: &mut StdRng, edges: &mut Vec<KgEdge>| {
        if pool.len() < 2 {
            return;
        }
        let mut seen = HashSet::new();
        for (i, a) in pool.iter().enumerate() {
            for _ in 0..degree {
                let j = rng.gen_range(0..pool.len());
                let key = (i.min(j), i.max(j));
                if i == j || !seen.insert(key) {
                    continue;
                }
                let weight = (rng.gen_range(0..=100) as f64) / 100.0;
                edges.push(KgEdge {
                    src: a.clone(),
                    dst: pool[j].clone(),
                    kind: EdgeKind::SimilarTo,
                    weight,
                });
            }
        }
    };
    similar(
        &materials,
        spec.material_similarity_degree,
        &mut rng,
        &mut edges,
    );
    similar(
        &courses,
        spec.course_similarity_degree,
        &mut rng,
        &mut edges,
    );

    KnowledgeGraph::new(nodes, edges).expect("synthetic graphs are valid")
}

/// A path over the first course and a few of its materials.
pub fn synthetic_path(g: &KnowledgeGraph) -> LearningPath {
    let mut ids: Vec<String> = g
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Course)
        .take(1)
        .map(|n| n.id.clone())
        .collect();
    ids.extend(
        g.nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Material)
            .take(5)
            .map(|n| n.id.clone()),
    );
    LearningPath {
        node_ids: ids,
        display_formats: vec![crate::kg::DisplayFormat::Textual],
    }
}
