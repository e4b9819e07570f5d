//! Intent categories and classifier backends.
//!
//! Every student utterance is mapped onto one of seven categories. The
//! default backend scores weighted lexicon phrases; an LLM-backed backend and
//! two fixed backends (for tests and evaluation) share the same interface.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm::{CompletionRequest, LlmGateway};
use crate::text;

/// Below this top score every utterance is routed to [`IntentCategory::Other`].
pub const DEFAULT_OTHER_FLOOR: f64 = 0.2;

pub const LEXICON_FORMAT_VERSION: u32 = 1;

/// The lexicon bundled with the crate.
pub const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.json");

/// Labeled utterances (10 per category) bundled for evaluation.
pub const BUNDLED_GOLD: &str = include_str!("../data/gold_intents.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum IntentCategory {
    Reason = 1,
    PageContent = 2,
    Benefit = 3,
    Relations = 4,
    AdditionalInfo = 5,
    StudentContext = 6,
    Other = 7,
}

impl IntentCategory {
    pub const ALL: [IntentCategory; 7] = [
        IntentCategory::Reason,
        IntentCategory::PageContent,
        IntentCategory::Benefit,
        IntentCategory::Relations,
        IntentCategory::AdditionalInfo,
        IntentCategory::StudentContext,
        IntentCategory::Other,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    pub fn index(self) -> usize {
        usize::from(self.id()) - 1
    }

    pub fn description(self) -> &'static str {
        match self {
            IntentCategory::Reason => "Query about the reason behind the recommendation.",
            IntentCategory::PageContent => {
                "Query about the content on the recommendation page in the web application."
            }
            IntentCategory::Benefit => {
                "Query about the benefits that will be gained from learning a certain learning material in the recommended path."
            }
            IntentCategory::Relations => {
                "Query about the relations and similarities between recommended materials and those in the KG."
            }
            IntentCategory::AdditionalInfo => {
                "Query for additional information about the recommended materials."
            }
            IntentCategory::StudentContext => {
                "Query about the relation of recommended materials to the student's context (e.g., their daily work)."
            }
            IntentCategory::Other => "Other queries",
        }
    }

    /// Short phrase used in user-facing text ("the reason behind the recommendation").
    pub fn topic(self) -> &'static str {
        match self {
            IntentCategory::Reason => "the reason behind the recommendation",
            IntentCategory::PageContent => "the content shown on the recommendation page",
            IntentCategory::Benefit => "the benefits of learning a material in your path",
            IntentCategory::Relations => {
                "the relations and similarities between the recommended materials and others"
            }
            IntentCategory::AdditionalInfo => "additional information about a recommended material",
            IntentCategory::StudentContext => {
                "how the recommended materials relate to your own context, such as your daily work"
            }
            IntentCategory::Other => "something outside the supported questions",
        }
    }

    pub fn is_supported(self) -> bool {
        self != IntentCategory::Other
    }
}

impl fmt::Display for IntentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl From<IntentCategory> for u8 {
    fn from(c: IntentCategory) -> u8 {
        c.id()
    }
}

impl TryFrom<u8> for IntentCategory {
    type Error = String;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        Self::from_id(id).ok_or_else(|| format!("intent category {id} outside 1..=7"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPrediction {
    pub category: IntentCategory,
    pub confidence: f64,
    /// Other candidate categories, most confident first.
    pub alternates: Vec<(IntentCategory, f64)>,
}

impl IntentPrediction {
    /// A prediction with full confidence and no alternates.
    pub fn certain(category: IntentCategory) -> Self {
        Self {
            category,
            confidence: 1.0,
            alternates: Vec::new(),
        }
    }

    /// Checks the shape invariants: confidences in [0, 1], sorted descending
    /// starting with the chosen category, all categories distinct.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = [false; 7];
        let mut prev = self.confidence;
        if !(0.0..=1.0).contains(&self.confidence) {
            return false;
        }
        seen[self.category.index()] = true;
        for &(c, conf) in &self.alternates {
            if seen[c.index()] || !(0.0..=1.0).contains(&conf) || conf > prev {
                return false;
            }
            seen[c.index()] = true;
            prev = conf;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("malformed lexicon: {0}")]
    Lexicon(String),
    #[error("malformed dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },
}

/// Classifier backend.
pub trait IntentBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Predicts a category for an utterance already known to be nonempty.
    fn predict(&self, utterance: &str) -> IntentPrediction;
}

/// Validates the utterance and delegates to `backend`.
pub fn classify(
    utterance: &str,
    backend: &dyn IntentBackend,
) -> Result<IntentPrediction, IntentError> {
    let trimmed = utterance.trim();
    if trimmed.is_empty() {
        return Err(IntentError::EmptyUtterance);
    }
    Ok(backend.predict(trimmed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub phrase: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledEntry {
    tokens: Vec<String>,
    weight: f64,
}

/// Versioned phrase lists per category.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    version: String,
    entries: [Vec<CompiledEntry>; 7],
}

#[derive(Deserialize)]
struct LexiconDocument {
    format_version: u32,
    lexicon_version: String,
    categories: HashMap<String, Vec<LexiconEntry>>,
}

impl Lexicon {
    pub fn from_json(document: &str) -> Result<Self, IntentError> {
        let doc: LexiconDocument =
            serde_json::from_str(document).map_err(|e| IntentError::Lexicon(e.to_string()))?;
        if doc.format_version != LEXICON_FORMAT_VERSION {
            return Err(IntentError::Lexicon(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let mut categories = Vec::new();
        for (key, entries) in doc.categories {
            let category = key
                .parse::<u8>()
                .ok()
                .and_then(IntentCategory::from_id)
                .ok_or_else(|| IntentError::Lexicon(format!("unknown category {key:?}")))?;
            categories.push((category, entries));
        }
        Self::new(doc.lexicon_version, categories)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, IntentError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| IntentError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }

    pub fn new(
        version: impl Into<String>,
        categories: impl IntoIterator<Item = (IntentCategory, Vec<LexiconEntry>)>,
    ) -> Result<Self, IntentError> {
        let mut entries: [Vec<CompiledEntry>; 7] = Default::default();
        for (category, list) in categories {
            for entry in list {
                let tokens = text::tokenize(&entry.phrase);
                if tokens.is_empty() {
                    return Err(IntentError::Lexicon(format!(
                        "category {category}: phrase {:?} has no tokens",
                        entry.phrase
                    )));
                }
                if !(entry.weight > 0.0 && entry.weight <= 1.0) {
                    return Err(IntentError::Lexicon(format!(
                        "category {category}: weight {} of {:?} outside (0, 1]",
                        entry.weight, entry.phrase
                    )));
                }
                entries[category.index()].push(CompiledEntry {
                    tokens,
                    weight: entry.weight,
                });
            }
        }
        Ok(Self {
            version: version.into(),
            entries,
        })
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Phrases of one category, rendered back to text.
    pub fn phrases(&self, category: IntentCategory) -> Vec<(String, f64)> {
        self.entries[category.index()]
            .iter()
            .map(|e| (e.tokens.join(" "), e.weight))
            .collect()
    }
}

/// Deterministic keyword/phrase-overlap classifier.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    lexicon: Lexicon,
    floor: f64,
}

impl LexiconClassifier {
    pub fn new(lexicon: Lexicon) -> Self {
        Self {
            lexicon,
            floor: DEFAULT_OTHER_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn bundled() -> Self {
        Self::new(Lexicon::bundled())
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Per-category score: the sum of weights of every lexicon phrase that
    /// occurs in the utterance as a contiguous token run, capped at 1.
    pub fn scores(&self, utterance: &str) -> [f64; 7] {
        let tokens = text::tokenize(utterance);
        let mut scores = [0.0; 7];
        for (i, entries) in self.lexicon.entries.iter().enumerate() {
            let total: f64 = entries
                .iter()
                .filter(|e| {
                    tokens
                        .windows(e.tokens.len())
                        .any(|w| w == e.tokens.as_slice())
                })
                .map(|e| e.weight)
                .sum();
            scores[i] = total.min(1.0);
        }
        scores
    }

    /// Turns a score vector into a prediction. Argmax with ties to the lowest
    /// id; "other" when nothing reaches the floor. Confidence is the top score
    /// weighted by its share of the total score mass.
    pub fn predict_from_scores(&self, scores: &[f64; 7]) -> IntentPrediction {
        let total: f64 = scores.iter().sum();
        let confidence_of = |s: f64| if total > 0.0 { s * (s / total) } else { 0.0 };

        let mut best = 0;
        for i in 1..7 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        let top = scores[best];
        let mut ranked: Vec<(IntentCategory, f64)> = IntentCategory::ALL
            .iter()
            .zip(scores)
            .filter(|(_, s)| **s > 0.0)
            .map(|(c, s)| (*c, confidence_of(*s)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        if top < self.floor {
            ranked.retain(|(c, _)| *c != IntentCategory::Other);
            return IntentPrediction {
                category: IntentCategory::Other,
                confidence: (1.0 - top).max(top),
                alternates: ranked,
            };
        }
        let category = IntentCategory::ALL[best];
        ranked.retain(|(c, _)| *c != category);
        IntentPrediction {
            category,
            confidence: confidence_of(top),
            alternates: ranked,
        }
    }
}

impl IntentBackend for LexiconClassifier {
    fn name(&self) -> &str {
        "baseline"
    }

    fn predict(&self, utterance: &str) -> IntentPrediction {
        self.predict_from_scores(&self.scores(utterance))
    }
}

/// Always answers with one category at full confidence.
#[derive(Debug, Clone, Copy)]
pub struct FixedBackend(pub IntentCategory);

impl IntentBackend for FixedBackend {
    fn name(&self) -> &str {
        "fixed"
    }

    fn predict(&self, _utterance: &str) -> IntentPrediction {
        IntentPrediction::certain(self.0)
    }
}

/// Looks utterances up in a labeled dataset; unknown ones are "other".
#[derive(Debug, Clone, Default)]
pub struct GoldEchoBackend {
    labels: HashMap<String, IntentCategory>,
}

impl GoldEchoBackend {
    pub fn new<'a>(items: impl IntoIterator<Item = (&'a str, IntentCategory)>) -> Self {
        Self {
            labels: items
                .into_iter()
                .map(|(u, c)| (u.trim().to_string(), c))
                .collect(),
        }
    }
}

impl IntentBackend for GoldEchoBackend {
    fn name(&self) -> &str {
        "echo-gold"
    }

    fn predict(&self, utterance: &str) -> IntentPrediction {
        IntentPrediction::certain(
            self.labels
                .get(utterance.trim())
                .copied()
                .unwrap_or(IntentCategory::Other),
        )
    }
}

/// Asks the language model to pick a category number. A malformed answer is
/// retried once; a second malformed answer or any gateway error falls back to
/// the lexicon baseline.
#[derive(Debug)]
pub struct LlmClassifier {
    gateway: Arc<LlmGateway>,
    fallback: LexiconClassifier,
}

impl LlmClassifier {
    pub fn new(gateway: Arc<LlmGateway>, fallback: LexiconClassifier) -> Self {
        Self { gateway, fallback }
    }

    pub fn prompt(utterance: &str) -> String {
        let mut prompt = String::from(
            "Classify the student's question about a learning-path recommendation into exactly one category.\n\
             Categories:\n",
        );
        for c in IntentCategory::ALL {
            prompt.push_str(&format!("{}. {}\n", c.id(), c.description()));
        }
        prompt.push_str("Answer with the category number only.\n");
        prompt.push_str(&format!("Question: {}", utterance.replace('\n', " ")));
        prompt
    }

    /// Accepts a bare digit 1-7, optionally followed by a period.
    pub fn parse_answer(answer: &str) -> Option<IntentCategory> {
        let answer = answer.trim().trim_end_matches('.');
        if answer.len() != 1 {
            return None;
        }
        answer.parse::<u8>().ok().and_then(IntentCategory::from_id)
    }
}

impl IntentBackend for LlmClassifier {
    fn name(&self) -> &str {
        "llm"
    }

    fn predict(&self, utterance: &str) -> IntentPrediction {
        let prompt = Self::prompt(utterance);
        for attempt in 1..=2 {
            match self
                .gateway
                .complete(&CompletionRequest::new(prompt.clone(), 16))
            {
                Ok(resp) => match Self::parse_answer(&resp.text) {
                    Some(category) => return IntentPrediction::certain(category),
                    None => log::warn!(
                        "attempt {attempt}: malformed category answer {:?}",
                        resp.text
                    ),
                },
                Err(e) => {
                    log::warn!("intent completion failed, using baseline: {e}");
                    break;
                }
            }
        }
        self.fallback.predict(utterance)
    }
}

/// Parses `utterance<TAB>category` lines. Blank lines and `#` comments are skipped.
pub fn parse_labeled_lines(content: &str) -> Result<Vec<(String, IntentCategory)>, IntentError> {
    let mut items = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (utterance, label) = line.rsplit_once('\t').ok_or_else(|| IntentError::Dataset {
            line: line_no,
            reason: "expected utterance<TAB>category".into(),
        })?;
        let category = label
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(IntentCategory::from_id)
            .ok_or_else(|| IntentError::Dataset {
                line: line_no,
                reason: format!("category {:?} outside 1..=7", label.trim()),
            })?;
        let utterance = utterance.trim();
        if utterance.is_empty() {
            return Err(IntentError::Dataset {
                line: line_no,
                reason: "empty utterance".into(),
            });
        }
        items.push((utterance.to_string(), category));
    }
    Ok(items)
}
