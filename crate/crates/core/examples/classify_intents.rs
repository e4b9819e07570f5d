//! Classifies questions with the lexicon baseline. Pass questions as
//! arguments, or pipe one per line on stdin.

use std::io::BufRead;

use pathchat_core::intent::{classify, LexiconClassifier};

fn main() {
    let mut questions: Vec<String> = std::env::args().skip(1).collect();
    if questions.is_empty() {
        questions = std::io::stdin()
            .lock()
            .lines()
            .map_while(Result::ok)
            .filter(|l| !l.trim().is_empty())
            .collect();
    }
    let classifier = LexiconClassifier::bundled();
    for q in questions {
        match classify(&q, &classifier) {
            Ok(p) => {
                let alternates: Vec<String> = p
                    .alternates
                    .iter()
                    .map(|(c, s)| format!("{c}:{s:.2}"))
                    .collect();
                println!(
                    "{}  {:.2}  [{}]  {q}",
                    p.category,
                    p.confidence,
                    alternates.join(" ")
                );
            }
            Err(e) => println!("error  {e}  {q}"),
        }
    }
}
