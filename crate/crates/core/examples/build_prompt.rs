//! Prints the enriched prompt for one question, optionally squeezed into a
//! character budget.
//!
//! ```text
//! cargo run -p pathchat-core --example build_prompt -- 4 "How does it relate?" pandas-groupby 900
//! ```

use pathchat_core::context::{ContextBuilder, ContextInput, ExpertConfig, DEFAULT_BUDGET_CHARS};
use pathchat_core::intent::IntentCategory;
use pathchat_core::kg::{sample_graph, sample_path};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let category = args
        .first()
        .and_then(|a| a.parse().ok())
        .and_then(IntentCategory::from_id)
        .unwrap_or(IntentCategory::Benefit);
    let utterance = args
        .get(1)
        .map_or("What will I gain from this material?", String::as_str);
    let focus = args.get(2).map_or("pandas-groupby", String::as_str);
    let budget = args
        .get(3)
        .and_then(|b| b.parse().ok())
        .unwrap_or(DEFAULT_BUDGET_CHARS);

    let g = sample_graph();
    let path = sample_path();
    let builder = ContextBuilder::new(ExpertConfig::bundled());
    let input = ContextInput {
        category,
        utterance,
        path: &path,
        focus: Some(focus),
        history: &[],
    };
    let ctx = builder.build(&g, input).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });

    for b in &ctx.kg_blocks {
        eprintln!(
            "block {:<12} priority {} ({} chars)",
            b.source.to_string(),
            b.priority,
            b.text.chars().count()
        );
    }
    match ctx.render(budget) {
        Ok(prompt) => println!("{prompt}"),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
