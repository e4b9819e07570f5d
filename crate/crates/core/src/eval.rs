//! Intent classifier evaluation: confusion matrix, per-category
//! precision/recall/F1 and accuracy.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::intent::{
    classify, parse_labeled_lines, IntentBackend, IntentCategory, IntentError, BUNDLED_GOLD,
};

const N: usize = IntentCategory::ALL.len();

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Dataset(#[from] IntentError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("precision and recall must lie in [0, 1], got ({p}, {r})")]
    Domain { p: f64, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    items: Vec<(String, IntentCategory)>,
}

impl LabeledDataset {
    pub fn new(items: Vec<(String, IntentCategory)>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyDataset);
        }
        if let Some(i) = items.iter().position(|(u, _)| u.trim().is_empty()) {
            return Err(IntentError::Dataset {
                line: i + 1,
                reason: "empty utterance".into(),
            }
            .into());
        }
        Ok(Self { items })
    }

    /// Parses `utterance<TAB>category` lines.
    pub fn from_tsv(content: &str) -> Result<Self, EvalError> {
        Self::new(parse_labeled_lines(content)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&content)
    }

    /// The 70-utterance fixture shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_GOLD).expect("bundled gold dataset is valid")
    }

    pub fn items(&self) -> &[(String, IntentCategory)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Rows are gold categories, columns predicted ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: IntentCategory, predicted: IntentCategory) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: IntentCategory, predicted: IntentCategory) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, gold: IntentCategory) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: IntentCategory) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (cell, o) in row.iter_mut().zip(other_row) {
                *cell += o;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: IntentCategory,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Metrics at full precision; use [`round2`] or the renderers for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub backend: String,
    pub per_category: Vec<CategoryMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

/// `2pr / (p + r)`, zero when both are zero.
pub fn f1(p: f64, r: f64) -> Result<f64, EvalError> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&r) {
        return Err(EvalError::Domain { p, r });
    }
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Rounds to two decimals, halves away from zero. Values within 1e-9 of a
/// half step count as the half step so binary noise does not round down.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let snapped = (scaled * 1e7).round() / 1e7;
    (snapped.abs() + 0.5).floor().copysign(snapped) / 100.0
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricReport {
    pub fn from_matrix(backend: &str, m: &ConfusionMatrix) -> Self {
        let per_category = IntentCategory::ALL
            .iter()
            .map(|&c| {
                let tp = m.get(c, c);
                let precision = ratio(tp, m.column_sum(c));
                let recall = ratio(tp, m.row_sum(c));
                CategoryMetrics {
                    category: c,
                    precision,
                    recall,
                    f1: f1(precision, recall).expect("ratios lie in [0, 1]"),
                    support: m.row_sum(c),
                }
            })
            .collect();
        Self {
            backend: backend.to_string(),
            per_category,
            accuracy: ratio(m.trace(), m.total()),
            total: m.total(),
        }
    }

    pub fn category(&self, c: IntentCategory) -> &CategoryMetrics {
        &self.per_category[c.index()]
    }

    /// Plain-text table with two-decimal values.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "backend: {}", self.backend).unwrap();
        writeln!(
            out,
            "{:<6} {:>9} {:>6} {:>6} {:>7}",
            "class", "precision", "recall", "f1", "support"
        )
        .unwrap();
        for m in &self.per_category {
            writeln!(
                out,
                "{:<6} {:>9.2} {:>6.2} {:>6.2} {:>7}",
                m.category.id(),
                round2(m.precision),
                round2(m.recall),
                round2(m.f1),
                m.support
            )
            .unwrap();
        }
        write!(
            out,
            "accuracy {:.2} over {} items",
            round2(self.accuracy),
            self.total
        )
        .unwrap();
        out
    }
}

/// Machine-readable form written next to the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDocument {
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
    pub rounded: Vec<[f64; 3]>,
    pub rounded_accuracy: f64,
}

impl EvaluationDocument {
    pub fn new(confusion: ConfusionMatrix, report: MetricReport) -> Self {
        let rounded = report
            .per_category
            .iter()
            .map(|m| [round2(m.precision), round2(m.recall), round2(m.f1)])
            .collect();
        let rounded_accuracy = round2(report.accuracy);
        Self {
            confusion,
            report,
            rounded,
            rounded_accuracy,
        }
    }
}

/// Classifies every item on the calling thread.
pub fn evaluate(
    ds: &LabeledDataset,
    backend: &dyn IntentBackend,
) -> (ConfusionMatrix, MetricReport) {
    let mut m = ConfusionMatrix::default();
    classify_into(&mut m, ds.items(), backend);
    let report = MetricReport::from_matrix(backend.name(), &m);
    (m, report)
}

/// Like [`evaluate`] but splits the items across `workers` threads.
pub fn evaluate_parallel(
    ds: &LabeledDataset,
    backend: &dyn IntentBackend,
    workers: usize,
) -> (ConfusionMatrix, MetricReport) {
    let chunk = ds.len().div_ceil(workers.max(1));
    let partials: Vec<ConfusionMatrix> = std::thread::scope(|s| {
        let handles: Vec<_> = ds
            .items()
            .chunks(chunk)
            .map(|items| {
                s.spawn(move || {
                    let mut m = ConfusionMatrix::default();
                    classify_into(&mut m, items, backend);
                    m
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut m = ConfusionMatrix::default();
    for p in &partials {
        m.merge(p);
    }
    let report = MetricReport::from_matrix(backend.name(), &m);
    (m, report)
}

fn classify_into(
    m: &mut ConfusionMatrix,
    items: &[(String, IntentCategory)],
    backend: &dyn IntentBackend,
) {
    for (utterance, gold) in items {
        let predicted = classify(utterance, backend)
            .map(|p| p.category)
            .unwrap_or(IntentCategory::Other);
        m.record(*gold, predicted);
    }
}

/// Heat-map of the confusion matrix as an SVG document: gold classes on the
/// vertical axis, predicted on the horizontal, one shaded cell per count.
pub fn confusion_svg(m: &ConfusionMatrix) -> String {
    const CELL: usize = 60;
    const MARGIN: usize = 80;
    let size = MARGIN + CELL * N + 20;
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="14">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect width="{size}" height="{size}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle">Predicted label</text>"#,
        MARGIN + CELL * N / 2
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="20" y="{y}" text-anchor="middle" transform="rotate(-90 20 {y})">True label</text>"#,
        y = MARGIN + CELL * N / 2
    )
    .unwrap();
    for i in 0..N {
        let label = i + 1;
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            MARGIN + CELL * i + CELL / 2,
            MARGIN - 10
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            MARGIN - 10,
            MARGIN + CELL * i + CELL / 2 + 5
        )
        .unwrap();
    }
    for (r, row) in m.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let shade = 255 - (count * 200 / max) as u8;
            let text_fill = if shade < 140 { "white" } else { "black" };
            let (x, y) = (MARGIN + CELL * c, MARGIN + CELL * r);
            writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{text_fill}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 5
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{GoldEchoBackend, LexiconClassifier};
    use IntentCategory::*;

    #[test]
    fn f1_zero_and_domain() {
        assert_eq!(f1(0.0, 0.0).unwrap(), 0.0);
        assert!(f1(1.2, 0.5).is_err());
        assert!(f1(0.5, -0.1).is_err());
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(round2(0.665), 0.67);
        assert_eq!(round2(0.125), 0.13);
        assert_eq!(round2(0.8699), 0.87);
        assert_eq!(round2(1.0), 1.0);
        assert_eq!(round2(0.0), 0.0);
    }

    #[test]
    fn gold_echo_is_perfect() {
        let ds = LabeledDataset::bundled();
        let backend = GoldEchoBackend::new(ds.items().iter().map(|(u, c)| (u.as_str(), *c)));
        let (m, report) = evaluate(&ds, &backend);
        assert_eq!(m.trace(), ds.len() as u64);
        assert_eq!(report.accuracy, 1.0);
        assert!(report.per_category.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn three_item_hand_computation() {
        // Gold: 1, 1, 3. The backend labels "b" as 3.
        let ds = LabeledDataset::new(vec![
            ("a".into(), Reason),
            ("b".into(), Reason),
            ("c".into(), Benefit),
        ])
        .unwrap();
        let backend = GoldEchoBackend::new([("a", Reason), ("b", Benefit), ("c", Benefit)]);
        let (m, r) = evaluate(&ds, &backend);
        assert_eq!(m.get(Reason, Reason), 1);
        assert_eq!(m.get(Reason, Benefit), 1);
        assert_eq!(m.get(Benefit, Benefit), 1);
        assert_eq!(m.total(), 3);
        // Class 1: P = 1/1, R = 1/2, F1 = 2/3. Class 3: P = 1/2, R = 1/1, F1 = 2/3.
        assert_eq!(r.category(Reason).precision, 1.0);
        assert_eq!(r.category(Reason).recall, 0.5);
        assert!((r.category(Reason).f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.category(Benefit).precision, 0.5);
        assert!((r.category(Benefit).f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.category(Other).f1, 0.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let ds = LabeledDataset::bundled();
        let backend = LexiconClassifier::bundled();
        let seq = evaluate(&ds, &backend);
        for workers in [1, 3, 8] {
            assert_eq!(evaluate_parallel(&ds, &backend, workers), seq);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            LabeledDataset::from_tsv("# nothing\n"),
            Err(EvalError::EmptyDataset)
        ));
        assert!(LabeledDataset::from_tsv("hello\t9\n").is_err());
    }

    #[test]
    fn svg_has_a_cell_per_entry() {
        let ds = LabeledDataset::bundled();
        let (m, _) = evaluate(&ds, &LexiconClassifier::bundled());
        let svg = confusion_svg(&m);
        assert_eq!(svg.matches("<rect x=").count(), 49);
        assert!(svg.starts_with("<svg"));
    }
}
