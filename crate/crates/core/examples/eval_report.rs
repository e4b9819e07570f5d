//! Evaluates the lexicon classifier on the bundled labeled questions and
//! writes the confusion matrix as SVG.

use pathchat_core::eval::{confusion_svg, evaluate, LabeledDataset};
use pathchat_core::intent::LexiconClassifier;

fn main() -> std::io::Result<()> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => LabeledDataset::from_path(path).expect("readable dataset"),
        None => LabeledDataset::bundled(),
    };
    let (matrix, report) = evaluate(&dataset, &LexiconClassifier::bundled());
    println!("{}", report.to_table());

    let out = std::env::temp_dir().join("pathchat-confusion.svg");
    std::fs::write(&out, confusion_svg(&matrix))?;
    println!("confusion matrix written to {}", out.display());
    Ok(())
}
