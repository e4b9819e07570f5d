//! Times knowledge-graph content gathering for every intent on a synthetic
//! graph. Pass a node count to change the size (default 10000).

use std::time::Instant;

use pathchat_core::context::{gather_kg_content, RetrievalSettings};
use pathchat_core::intent::IntentCategory;
use pathchat_core::synth::{synthetic_graph, synthetic_path, SynthSpec};

fn main() {
    let nodes = std::env::args()
        .nth(1)
        .and_then(|n| n.parse().ok())
        .unwrap_or(10_000);
    let start = Instant::now();
    let g = synthetic_graph(SynthSpec::with_nodes(nodes), 1);
    println!(
        "built {} nodes, {} edges in {:.2?}",
        g.len(),
        g.edges().len(),
        start.elapsed()
    );

    let path = synthetic_path(&g);
    let focus = path.node_ids.last().map(String::as_str);
    let settings = RetrievalSettings::default();
    for category in IntentCategory::ALL {
        let start = Instant::now();
        let blocks = gather_kg_content(category, &path, focus, &g, &settings).expect("gather");
        let chars: usize = blocks.iter().map(|b| b.text.len()).sum();
        println!(
            "category {category}: {:>2} blocks, {chars:>5} chars, {:.2?}",
            blocks.len(),
            start.elapsed()
        );
    }
}
