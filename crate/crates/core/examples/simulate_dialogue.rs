//! Replays a scripted conversation offline and compares the bot's actions
//! with the script's expectations.
//!
//! ```text
//! cargo run -p pathchat-core --example simulate_dialogue -- crates/core/examples/scripts/fallback_to_mentor.json
//! ```

use std::sync::Arc;

use pathchat_core::bot::ExplainerBot;
use pathchat_core::llm::{LlmGateway, MockLlm};
use pathchat_core::simulate::{simulate, ScriptedDialogue};

const DEFAULT_SCRIPT: &str = include_str!("scripts/confirm_then_answer.json");

fn main() {
    let script = match std::env::args().nth(1) {
        Some(path) => ScriptedDialogue::from_path(&path),
        None => ScriptedDialogue::from_json(DEFAULT_SCRIPT),
    }
    .unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });

    let bot = ExplainerBot::sample(Arc::new(LlmGateway::new(MockLlm::new())));
    let report = simulate(&bot, &script);
    for line in &report.transcript {
        println!("{line}");
    }
    if report.passed() {
        println!("PASS, final phase {}", report.final_state.phase);
    } else {
        print!("{}", report.diff());
        report.errors.iter().for_each(|e| println!("error: {e}"));
        std::process::exit(1);
    }
}
