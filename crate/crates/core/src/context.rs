//! Prompt context assembly.
//!
//! A prompt is made of four sections in fixed order (roles, definitions,
//! rules, knowledge-graph content) followed by the task instruction. The
//! first three come from the expert configuration; the knowledge-graph
//! section is a list of blocks chosen per intent category. Rendering under a
//! character budget drops whole blocks, lowest importance first, and never
//! touches the other sections.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::intent::IntentCategory;
use crate::kg::{
    KgError, KgNode, KnowledgeGraph, LearningPath, NodeKind, DEFAULT_SIMILARITY_THRESHOLD,
};

pub const EXPERT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BUDGET_CHARS: usize = 12_000;
pub const DEFAULT_HISTORY_WINDOW: usize = 10;
pub const DEFAULT_NEIGHBOR_K: usize = 10;
/// Community members named in a prompt; the rest are only counted.
pub const COMMUNITY_LIST_LIMIT: usize = 25;

pub const BUNDLED_EXPERT_CONFIG: &str = include_str!("../data/expert_config.json");

const EMPTY_MARKER: &str = "(none)";

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("intent category {0} needs a focus node but none was given")]
    MissingFocus(IntentCategory),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(
        "budget of {budget} characters is below the {needed} needed for the mandatory sections"
    )]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("malformed expert config: {0}")]
    ExpertConfig(String),
    #[error("task template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub term: String,
    pub definition: String,
}

/// Roles, definitions and rules collected from educators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub roles: Vec<String>,
    pub definitions: Vec<Definition>,
    pub rules: Vec<String>,
}

#[derive(Deserialize)]
struct ExpertDocument {
    format_version: u32,
    roles: Vec<String>,
    definitions: Vec<Definition>,
    rules: Vec<String>,
}

impl ExpertConfig {
    pub fn from_json(document: &str) -> Result<Self, ContextError> {
        let doc: ExpertDocument = serde_json::from_str(document)
            .map_err(|e| ContextError::ExpertConfig(e.to_string()))?;
        if doc.format_version != EXPERT_FORMAT_VERSION {
            return Err(ContextError::ExpertConfig(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let config = Self {
            roles: doc.roles,
            definitions: doc.definitions,
            rules: doc.rules,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ContextError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| ContextError::ExpertConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_EXPERT_CONFIG).expect("bundled expert config is valid")
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        let empty = |s: &str| s.trim().is_empty();
        if self.roles.iter().any(|r| empty(r)) {
            return Err(ContextError::ExpertConfig("empty role".into()));
        }
        if self.rules.iter().any(|r| empty(r)) {
            return Err(ContextError::ExpertConfig("empty rule".into()));
        }
        if self
            .definitions
            .iter()
            .any(|d| empty(&d.term) || empty(&d.definition))
        {
            return Err(ContextError::ExpertConfig("empty definition".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSource {
    Path,
    Taxonomy,
    Similarity,
    Community,
    Metadata,
    PageLayout,
    ChatHistory,
}

impl fmt::Display for BlockSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockSource::Path => "path",
            BlockSource::Taxonomy => "taxonomy",
            BlockSource::Similarity => "similarity",
            BlockSource::Community => "community",
            BlockSource::Metadata => "metadata",
            BlockSource::PageLayout => "page_layout",
            BlockSource::ChatHistory => "chat_history",
        })
    }
}

/// Order in which block sources are dropped under budget pressure, first
/// dropped first. Sources missing from the list are dropped before all listed ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropOrder(pub Vec<BlockSource>);

impl Default for DropOrder {
    fn default() -> Self {
        Self(vec![
            BlockSource::Metadata,
            BlockSource::Community,
            BlockSource::Similarity,
            BlockSource::Taxonomy,
            BlockSource::PageLayout,
            BlockSource::Path,
            BlockSource::ChatHistory,
        ])
    }
}

impl DropOrder {
    /// Priority number of a source: 0 is kept longest.
    pub fn priority(&self, source: BlockSource) -> u32 {
        let n = self.0.len();
        match self.0.iter().position(|s| *s == source) {
            Some(i) => (n - 1 - i) as u32,
            None => n as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgContentBlock {
    pub source: BlockSource,
    pub text: String,
    /// Lower numbers are kept first when the budget is tight.
    pub priority: u32,
}

impl KgContentBlock {
    fn render(&self) -> String {
        format!("[{}] {}", self.source, self.text)
    }
}

/// One prior chat message fed back as context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub sender: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub roles_section: String,
    pub definitions_section: String,
    pub rules_section: String,
    pub kg_blocks: Vec<KgContentBlock>,
    pub task_instruction: String,
}

pub const SECTION_HEADERS: [&str; 5] = [
    "# Roles",
    "# Definitions",
    "# Rules",
    "# Knowledge graph content",
    "# Task",
];

impl PromptContext {
    /// The knowledge-graph section with every block present.
    pub fn kg_content_section(&self) -> String {
        render_blocks(self.kg_blocks.iter())
    }

    fn render_with(&self, keep: &[bool]) -> String {
        let blocks = self
            .kg_blocks
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(b, _)| b);
        [
            (SECTION_HEADERS[0], self.roles_section.as_str()),
            (SECTION_HEADERS[1], self.definitions_section.as_str()),
            (SECTION_HEADERS[2], self.rules_section.as_str()),
            (SECTION_HEADERS[3], render_blocks(blocks).as_str()),
            (SECTION_HEADERS[4], self.task_instruction.as_str()),
        ]
        .iter()
        .map(|(header, body)| format!("{header}\n{body}"))
        .collect::<Vec<_>>()
        .join("\n")
    }

    /// Renders the prompt within `budget` characters. Blocks are dropped
    /// whole, highest priority number first (later blocks first among equals).
    pub fn render(&self, budget: usize) -> Result<String, ContextError> {
        let mut keep = vec![true; self.kg_blocks.len()];
        let mandatory = self.render_with(&vec![false; keep.len()]);
        let needed = mandatory.chars().count();
        if needed > budget {
            return Err(ContextError::BudgetTooSmall { budget, needed });
        }
        let mut drop_sequence: Vec<usize> = (0..self.kg_blocks.len()).collect();
        drop_sequence.sort_by(|a, b| {
            self.kg_blocks[*b]
                .priority
                .cmp(&self.kg_blocks[*a].priority)
                .then(b.cmp(a))
        });
        let mut drops = drop_sequence.into_iter();
        loop {
            let rendered = self.render_with(&keep);
            if rendered.chars().count() <= budget {
                return Ok(rendered);
            }
            match drops.next() {
                Some(i) => keep[i] = false,
                None => return Ok(mandatory),
            }
        }
    }
}

fn render_blocks<'a>(blocks: impl Iterator<Item = &'a KgContentBlock>) -> String {
    let rendered: Vec<String> = blocks.map(KgContentBlock::render).collect();
    if rendered.is_empty() {
        EMPTY_MARKER.to_string()
    } else {
        rendered.join("\n")
    }
}

fn bullet_list(items: impl Iterator<Item = String>) -> String {
    let lines: Vec<String> = items.map(|i| format!("- {i}")).collect();
    if lines.is_empty() {
        EMPTY_MARKER.to_string()
    } else {
        lines.join("\n")
    }
}

/// Per-category task instructions with `{utterance}`, `{path_titles}` and
/// `{focus_title}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTemplates {
    templates: HashMap<IntentCategory, String>,
}

const DEFAULT_TEMPLATES: [&str; 7] = [
    include_str!("../data/templates/category_1.txt"),
    include_str!("../data/templates/category_2.txt"),
    include_str!("../data/templates/category_3.txt"),
    include_str!("../data/templates/category_4.txt"),
    include_str!("../data/templates/category_5.txt"),
    include_str!("../data/templates/category_6.txt"),
    include_str!("../data/templates/category_7.txt"),
];

impl Default for TaskTemplates {
    fn default() -> Self {
        Self {
            templates: IntentCategory::ALL
                .iter()
                .zip(DEFAULT_TEMPLATES)
                .map(|(c, t)| (*c, t.trim().to_string()))
                .collect(),
        }
    }
}

impl TaskTemplates {
    /// Loads `category_<id>.txt` files from `dir`; missing files keep the default.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, ContextError> {
        let mut templates = Self::default();
        for c in IntentCategory::ALL {
            let path = dir.as_ref().join(format!("category_{}.txt", c.id()));
            match std::fs::read_to_string(&path) {
                Ok(t) if !t.trim().is_empty() => {
                    templates.templates.insert(c, t.trim().to_string());
                }
                Ok(_) => {
                    return Err(ContextError::Template(format!(
                        "{} is empty",
                        path.display()
                    )))
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(ContextError::Template(format!("{}: {e}", path.display()))),
            }
        }
        Ok(templates)
    }

    pub fn set(&mut self, category: IntentCategory, template: impl Into<String>) {
        self.templates.insert(category, template.into());
    }

    pub fn get(&self, category: IntentCategory) -> &str {
        &self.templates[&category]
    }

    /// Fills the placeholders. Newlines are flattened so the instruction stays one line.
    pub fn instantiate(
        &self,
        category: IntentCategory,
        utterance: &str,
        path_titles: &str,
        focus_title: &str,
    ) -> String {
        let flat = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        flat(
            &self
                .get(category)
                .replace("{utterance}", &flat(utterance))
                .replace("{path_titles}", path_titles)
                .replace("{focus_title}", focus_title),
        )
    }
}

/// Tunables for knowledge-graph retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    pub similarity_threshold: f64,
    pub neighbor_k: usize,
    pub drop_order: DropOrder,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            neighbor_k: DEFAULT_NEIGHBOR_K,
            drop_order: DropOrder::default(),
        }
    }
}

fn needs_focus(category: IntentCategory) -> bool {
    matches!(
        category,
        IntentCategory::Benefit | IntentCategory::Relations | IntentCategory::AdditionalInfo
    )
}

/// Collects the knowledge-graph blocks for one intent.
pub fn gather_kg_content(
    category: IntentCategory,
    path: &LearningPath,
    focus: Option<&str>,
    g: &KnowledgeGraph,
    settings: &RetrievalSettings,
) -> Result<Vec<KgContentBlock>, ContextError> {
    path.validate(g)?;
    let focus = match focus {
        Some(id) => Some(g.get_node(id)?),
        None if needs_focus(category) => return Err(ContextError::MissingFocus(category)),
        None => None,
    };
    let block = |source: BlockSource, text: String| KgContentBlock {
        source,
        text,
        priority: settings.drop_order.priority(source),
    };
    let threshold = settings.similarity_threshold;

    let blocks = match category {
        IntentCategory::Reason => vec![
            block(BlockSource::Path, path_text(g, path)?),
            block(BlockSource::Similarity, path_similarity_text(g, path)?),
        ],
        IntentCategory::PageContent => vec![
            block(BlockSource::Path, path_text(g, path)?),
            block(BlockSource::PageLayout, page_layout_text(path)),
        ],
        IntentCategory::Benefit | IntentCategory::AdditionalInfo => {
            let node = focus.expect("checked above");
            vec![
                block(BlockSource::Metadata, metadata_text(node)),
                block(BlockSource::Taxonomy, taxonomy_text(g, node)?),
            ]
        }
        IntentCategory::Relations => {
            let node = focus.expect("checked above");
            vec![
                block(
                    BlockSource::Similarity,
                    neighbors_text(g, node, threshold, settings.neighbor_k)?,
                ),
                block(BlockSource::Community, community_text(g, node, threshold)?),
            ]
        }
        IntentCategory::StudentContext => {
            let subjects: Vec<&KgNode> = match focus {
                Some(node) => vec![node],
                None => path
                    .node_ids
                    .iter()
                    .map(|id| g.get_node(id))
                    .collect::<Result<_, _>>()?,
            };
            let mut blocks = Vec::new();
            for node in subjects {
                blocks.push(block(
                    BlockSource::Community,
                    community_text(g, node, threshold)?,
                ));
                blocks.push(block(BlockSource::Metadata, domain_tags_text(node)));
            }
            blocks
        }
        IntentCategory::Other => Vec::new(),
    };
    Ok(blocks)
}

fn path_text(g: &KnowledgeGraph, path: &LearningPath) -> Result<String, KgError> {
    let mut items = Vec::with_capacity(path.node_ids.len());
    for (i, id) in path.node_ids.iter().enumerate() {
        let node = g.get_node(id)?;
        items.push(format!("{}. {} ({})", i + 1, node.title, node.kind));
    }
    Ok(format!(
        "Recommended learning path in order: {}",
        items.join("; ")
    ))
}

fn path_similarity_text(g: &KnowledgeGraph, path: &LearningPath) -> Result<String, KgError> {
    let mut pairs = Vec::new();
    for (i, a) in path.node_ids.iter().enumerate() {
        for b in &path.node_ids[i + 1..] {
            if let Some(w) = g.similarity(a, b) {
                pairs.push(format!(
                    "{} ~ {}: {w:.2}",
                    g.get_node(a)?.title,
                    g.get_node(b)?.title
                ));
            }
        }
    }
    Ok(if pairs.is_empty() {
        "No similarity scores are recorded between items of the path.".to_string()
    } else {
        format!("Similarity scores between path items: {}", pairs.join("; "))
    })
}

fn page_layout_text(path: &LearningPath) -> String {
    use crate::kg::DisplayFormat::*;
    let formats = [Textual, Structural, Visual]
        .iter()
        .map(|f| {
            let shown = if path.display_formats.contains(f) {
                "shown"
            } else {
                "not shown"
            };
            format!("{f} ({shown})")
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("The recommendation page can present the path in textual, structural, and visual formats: {formats}.")
}

fn metadata_text(node: &KgNode) -> String {
    let attrs: Vec<String> = node
        .metadata
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect();
    if attrs.is_empty() {
        format!("{} ({}) has no recorded metadata.", node.title, node.kind)
    } else {
        format!("{} ({}): {}", node.title, node.kind, attrs.join("; "))
    }
}

fn domain_tags_text(node: &KgNode) -> String {
    match node.metadata.get("domain") {
        Some(tags) => format!("{} domain tags: {tags}", node.title),
        None => format!("{} has no domain tags.", node.title),
    }
}

fn taxonomy_text(g: &KnowledgeGraph, node: &KgNode) -> Result<String, KgError> {
    Ok(match node.kind {
        NodeKind::Material => match g.taxonomy_path(&node.id) {
            Ok([course, topic, material]) => format!(
                "Curriculum position: course \"{}\" > topic \"{}\" > material \"{}\"",
                course.title, topic.title, material.title
            ),
            Err(KgError::Orphan(_)) => {
                format!("\"{}\" is not attached to a course topic.", node.title)
            }
            Err(e) => return Err(e),
        },
        NodeKind::Topic => {
            let course = g.parent(&node.id)?;
            let materials = titles(&g.children(&node.id)?);
            format!(
                "Topic \"{}\" belongs to course {} and contains materials: {}",
                node.title,
                course.map_or_else(|| "(none)".to_string(), |c| format!("\"{}\"", c.title)),
                materials
            )
        }
        NodeKind::Course => {
            let topics = g.children(&node.id)?;
            let parts: Vec<String> = topics
                .iter()
                .map(|t| Ok(format!("\"{}\" ({})", t.title, titles(&g.children(&t.id)?))))
                .collect::<Result<_, KgError>>()?;
            format!(
                "Course \"{}\" contains topics: {}",
                node.title,
                if parts.is_empty() {
                    "(none)".to_string()
                } else {
                    parts.join("; ")
                }
            )
        }
    })
}

fn titles(nodes: &[&KgNode]) -> String {
    if nodes.is_empty() {
        return "(none)".into();
    }
    nodes
        .iter()
        .map(|n| n.title.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

fn neighbors_text(
    g: &KnowledgeGraph,
    node: &KgNode,
    threshold: f64,
    k: usize,
) -> Result<String, KgError> {
    let neighbors = g.similarity_neighbors(&node.id, threshold, k)?;
    Ok(if neighbors.is_empty() {
        format!(
            "{} has no similar {}s with score at least {threshold:.2}.",
            node.title, node.kind
        )
    } else {
        let list: Vec<String> = neighbors
            .iter()
            .map(|(n, w)| format!("{} ({w:.2})", n.title))
            .collect();
        format!(
            "Most similar {}s to {}: {}",
            node.kind,
            node.title,
            list.join("; ")
        )
    })
}

fn community_text(g: &KnowledgeGraph, node: &KgNode, threshold: f64) -> Result<String, KgError> {
    let members = g.community_of(&node.id, threshold)?;
    let others = members.len() - 1;
    let named: Vec<&str> = members
        .iter()
        .filter(|id| **id != node.id)
        .take(COMMUNITY_LIST_LIMIT)
        .map(|id| g.get_node(id).map(|n| n.title.as_str()))
        .collect::<Result<_, _>>()?;
    if named.is_empty() {
        return Ok(format!(
            "{} does not belong to a community at similarity {threshold:.2}.",
            node.title
        ));
    }
    let mut list = named.join(", ");
    if others > named.len() {
        list.push_str(&format!(" and {} more", others - named.len()));
    }
    Ok(format!(
        "{} belongs to a community of {} {}s (similarity at least {threshold:.2}) with: {list}",
        node.title,
        members.len(),
        node.kind,
    ))
}

/// Builds prompt contexts from a fixed expert configuration and templates.
#[derive(Debug, Clone, Default)]
pub struct ContextBuilder {
    pub expert: ExpertConfig,
    pub templates: TaskTemplates,
    pub retrieval: RetrievalSettings,
}

/// Everything that varies per question.
#[derive(Debug, Clone, Copy)]
pub struct ContextInput<'a> {
    pub category: IntentCategory,
    pub utterance: &'a str,
    pub path: &'a LearningPath,
    pub focus: Option<&'a str>,
    pub history: &'a [HistoryLine],
}

impl ContextBuilder {
    pub fn new(expert: ExpertConfig) -> Self {
        Self {
            expert,
            ..Self::default()
        }
    }

    pub fn build(
        &self,
        g: &KnowledgeGraph,
        input: ContextInput<'_>,
    ) -> Result<PromptContext, ContextError> {
        let mut kg_blocks =
            gather_kg_content(input.category, input.path, input.focus, g, &self.retrieval)?;
        if !input.history.is_empty() {
            let lines: Vec<String> = input
                .history
                .iter()
                .map(|h| {
                    format!(
                        "{}: {}",
                        h.sender,
                        h.text.split_whitespace().collect::<Vec<_>>().join(" ")
                    )
                })
                .collect();
            kg_blocks.push(KgContentBlock {
                source: BlockSource::ChatHistory,
                text: format!("Recent conversation:\n{}", lines.join("\n")),
                priority: self.retrieval.drop_order.priority(BlockSource::ChatHistory),
            });
        }

        let path_titles = input
            .path
            .node_ids
            .iter()
            .map(|id| g.get_node(id).map(|n| n.title.as_str()))
            .collect::<Result<Vec<_>, _>>()?
            .join(", ");
        let focus_title = match input.focus {
            Some(id) => g.get_node(id)?.title.clone(),
            None => "the recommended materials".to_string(),
        };

        Ok(PromptContext {
            roles_section: bullet_list(self.expert.roles.iter().cloned()),
            definitions_section: bullet_list(
                self.expert
                    .definitions
                    .iter()
                    .map(|d| format!("{}: {}", d.term, d.definition)),
            ),
            rules_section: bullet_list(self.expert.rules.iter().cloned()),
            kg_blocks,
            task_instruction: self.templates.instantiate(
                input.category,
                input.utterance,
                &path_titles,
                &focus_title,
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{sample_graph, sample_path};

    fn input<'a>(
        category: IntentCategory,
        path: &'a LearningPath,
        focus: Option<&'a str>,
        history: &'a [HistoryLine],
    ) -> ContextInput<'a> {
        ContextInput {
            category,
            utterance: "How does this relate?",
            path,
            focus,
            history,
        }
    }

    #[test]
    fn other_category_has_no_blocks() {
        let g = sample_graph();
        let blocks = gather_kg_content(
            IntentCategory::Other,
            &sample_path(),
            None,
            &g,
            &RetrievalSettings::default(),
        )
        .unwrap();
        assert!(blocks.is_empty());
    }

    #[test]
    fn focus_required_for_three_to_five() {
        let g = sample_graph();
        for c in [
            IntentCategory::Benefit,
            IntentCategory::Relations,
            IntentCategory::AdditionalInfo,
        ] {
            let err = gather_kg_content(c, &sample_path(), None, &g, &RetrievalSettings::default());
            assert!(matches!(err, Err(ContextError::MissingFocus(x)) if x == c));
        }
        for c in [
            IntentCategory::Reason,
            IntentCategory::PageContent,
            IntentCategory::StudentContext,
        ] {
            assert!(
                gather_kg_content(c, &sample_path(), None, &g, &RetrievalSettings::default())
                    .is_ok()
            );
        }
    }

    #[test]
    fn page_content_mentions_all_formats() {
        let g = sample_graph();
        let mut path = sample_path();
        path.display_formats.truncate(1);
        let blocks = gather_kg_content(
            IntentCategory::PageContent,
            &path,
            None,
            &g,
            &RetrievalSettings::default(),
        )
        .unwrap();
        let layout = blocks
            .iter()
            .find(|b| b.source == BlockSource::PageLayout)
            .unwrap();
        for f in ["textual", "structural", "visual"] {
            assert!(layout.text.contains(f));
        }
        assert!(layout.text.contains("visual (not shown)"));
    }

    #[test]
    fn empty_expert_config_marks_sections_empty() {
        let g = sample_graph();
        let path = sample_path();
        let ctx = ContextBuilder::default()
            .build(&g, input(IntentCategory::Other, &path, None, &[]))
            .unwrap();
        for section in [
            &ctx.roles_section,
            &ctx.definitions_section,
            &ctx.rules_section,
        ] {
            assert_eq!(section, EMPTY_MARKER);
        }
        assert_eq!(ctx.kg_content_section(), EMPTY_MARKER);
        assert!(ctx.task_instruction.contains("How does this relate?"));
    }

    #[test]
    fn rule_passes_through_verbatim() {
        let g = sample_graph();
        let path = sample_path();
        let expert = ExpertConfig {
            rules: vec!["answer in at most 120 words".into()],
            ..Default::default()
        };
        let ctx = ContextBuilder::new(expert)
            .build(&g, input(IntentCategory::Reason, &path, None, &[]))
            .unwrap();
        assert!(ctx.rules_section.contains("answer in at most 120 words"));
        assert!(ctx
            .render(DEFAULT_BUDGET_CHARS)
            .unwrap()
            .contains("answer in at most 120 words"));
    }

    #[test]
    fn history_block_is_last_and_ordered() {
        let g = sample_graph();
        let path = sample_path();
        let history: Vec<HistoryLine> = (1..=10)
            .map(|i| HistoryLine {
                sender: format!("user{}", i % 2),
                text: format!("message {i}"),
            })
            .collect();
        let ctx = ContextBuilder::default()
            .build(&g, input(IntentCategory::Reason, &path, None, &history))
            .unwrap();
        let section = ctx.kg_content_section();
        let tail: Vec<&str> = section
            .lines()
            .rev()
            .take(10)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let expected: Vec<String> = history
            .iter()
            .map(|h| format!("{}: {}", h.sender, h.text))
            .collect();
        assert_eq!(tail, expected);
    }

    #[test]
    fn render_keeps_section_order_and_errors_when_too_small() {
        let g = sample_graph();
        let path = sample_path();
        let ctx = ContextBuilder::new(ExpertConfig::bundled())
            .build(
                &g,
                input(IntentCategory::Relations, &path, Some("data-analysis"), &[]),
            )
            .unwrap();
        let text = ctx.render(DEFAULT_BUDGET_CHARS).unwrap();
        let positions: Vec<usize> = SECTION_HEADERS
            .iter()
            .map(|h| text.find(h).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("Python Modules for Data Science (0.88)"));
        assert!(matches!(
            ctx.render(100),
            Err(ContextError::BudgetTooSmall { budget: 100, .. })
        ));
    }

    #[test]
    fn drop_order_priorities() {
        let order = DropOrder::default();
        assert_eq!(order.priority(BlockSource::ChatHistory), 0);
        assert_eq!(order.priority(BlockSource::Metadata), 6);
        assert!(order.priority(BlockSource::Community) > order.priority(BlockSource::Similarity));
        let partial = DropOrder(vec![BlockSource::Path]);
        assert_eq!(partial.priority(BlockSource::Metadata), 1);
    }

    #[test]
    fn templates_override_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("category_4.txt"),
            "Custom {focus_title}: {utterance}\n",
        )
        .unwrap();
        let t = TaskTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(
            t.instantiate(IntentCategory::Relations, "a\nb", "", "X"),
            "Custom X: a b"
        );
        assert_eq!(
            t.get(IntentCategory::Reason),
            TaskTemplates::default().get(IntentCategory::Reason)
        );
    }

    #[test]
    fn expert_config_validation() {
        assert!(ExpertConfig::from_json(
            r#"{"format_version": 1, "roles": [], "definitions": [], "rules": [""]}"#
        )
        .is_err());
        assert!(ExpertConfig::from_json(r#"{"format_version": 1, "roles": []}"#).is_err());
        let ok = ExpertConfig::from_json(
            r#"{"format_version": 1, "roles": [], "definitions": [], "rules": []}"#,
        )
        .unwrap();
        assert_eq!(ok, ExpertConfig::default());
    }

    #[test]
    fn large_communities_are_counted_not_listed() {
        let g = crate::synth::synthetic_graph(crate::synth::SynthSpec::with_nodes(2_000), 3);
        let settings = RetrievalSettings::default();
        let (node, size) = g
            .nodes()
            .iter()
            .take(50)
            .map(|n| {
                (
                    n,
                    g.community_of(&n.id, settings.similarity_threshold)
                        .unwrap()
                        .len(),
                )
            })
            .max_by_key(|(_, size)| *size)
            .unwrap();
        assert!(size > COMMUNITY_LIST_LIMIT + 1);
        let text = community_text(&g, node, settings.similarity_threshold).unwrap();
        assert!(text.contains(&format!("community of {size} ")));
        assert!(text.ends_with(&format!(" and {} more", size - 1 - COMMUNITY_LIST_LIMIT)));
        let listed = text
            .split(" with: ")
            .nth(1)
            .unwrap()
            .split(" and ")
            .next()
            .unwrap();
        assert!(listed.len() < 2_000);
    }
}
