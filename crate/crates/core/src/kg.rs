//! Knowledge graph of courses, topics and learning materials.
//!
//! The graph is loaded once from a JSON document, validated, and then only
//! read. Courses contain topics, topics contain materials (a forest), and
//! `similar_to` edges carry precomputed similarity weights between nodes of
//! the same level.
//!
//! Graph document layout:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "nodes": [{"id": "data-analysis", "kind": "course", "title": "Data Analysis",
//!              "metadata": {"domain": ["computer science"]}}],
//!   "edges": [{"src": "data-analysis", "dst": "data-visualization",
//!              "kind": "similar_to", "weight": 0.8}]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::text;

pub const FORMAT_VERSION: u32 = 1;

/// Similarity threshold used when a caller does not supply one.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Course,
    Topic,
    Material,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Course => "course",
            NodeKind::Topic => "topic",
            NodeKind::Material => "material",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Contains,
    SimilarTo,
}

/// A metadata attribute: either a single string or a list of strings
/// (domain tags, for instance).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Text(String),
    List(Vec<String>),
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Text(s) => f.write_str(s),
            MetaValue::List(items) => f.write_str(&items.join(", ")),
        }
    }
}

impl MetaValue {
    fn strings(&self) -> Vec<&str> {
        match self {
            MetaValue::Text(s) => vec![s.as_str()],
            MetaValue::List(items) => items.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgNode {
    pub id: String,
    pub kind: NodeKind,
    pub title: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, MetaValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct GraphDocument {
    format_version: u32,
    nodes: Vec<KgNode>,
    edges: Vec<EdgeDocument>,
}

#[derive(Debug, Deserialize, Serialize)]
struct EdgeDocument {
    src: String,
    dst: String,
    kind: EdgeKind,
    #[serde(default)]
    weight: Option<f64>,
}

/// First invariant a graph document violates.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("node with empty id")]
    EmptyId,
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {0:?} has an empty title")]
    EmptyTitle(String),
    #[error("edge {src:?} -> {dst:?} references missing node {missing:?}")]
    DanglingEdge {
        src: String,
        dst: String,
        missing: String,
    },
    #[error("self-loop on node {0:?}")]
    SelfLoop(String),
    #[error("contains edge {src:?} -> {dst:?} must link course->topic or topic->material")]
    BadContains { src: String, dst: String },
    #[error("similar_to edge {src:?} -- {dst:?} must link two materials or two courses")]
    BadSimilarity { src: String, dst: String },
    #[error("similar_to pair {a:?} -- {b:?} is stored more than once")]
    DuplicateSimilarity { a: String, b: String },
    #[error("edge {src:?} -> {dst:?} has weight {weight} outside [0, 1]")]
    WeightOutOfRange {
        src: String,
        dst: String,
        weight: f64,
    },
    #[error("contains edge {src:?} -> {dst:?} must have weight 1.0, got {weight}")]
    ContainsWeight {
        src: String,
        dst: String,
        weight: f64,
    },
    #[error("similar_to edge {src:?} -- {dst:?} is missing a weight")]
    MissingWeight { src: String, dst: String },
    #[error("hierarchy is not a forest: {child:?} has parents {first:?} and {second:?}")]
    MultipleParents {
        child: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("malformed graph document: {0}")]
    Parse(String),
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid graph: {0}")]
    Validation(#[from] ValidationError),
    #[error("node {0:?} not found")]
    NotFound(String),
    #[error("node {id:?} is a {kind}, expected a material")]
    NotMaterial { id: String, kind: NodeKind },
    #[error("node {0:?} has no parent in the course/topic hierarchy")]
    Orphan(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid learning path: {0}")]
    InvalidPath(String),
}

struct NodeTokens {
    all: HashSet<String>,
    title: HashSet<String>,
}

/// Immutable, validated knowledge graph with adjacency indexes.
pub struct KnowledgeGraph {
    nodes: Vec<KgNode>,
    edges: Vec<KgEdge>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    similar: Vec<Vec<(usize, f64)>>,
    tokens: Vec<NodeTokens>,
}

impl fmt::Debug for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeGraph")
            .field("nodes", &self.nodes.len())
            .field("edges", &self.edges.len())
            .finish()
    }
}

/// A scored search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit<'g> {
    pub node: &'g KgNode,
    pub score: usize,
}

impl KnowledgeGraph {
    /// Parses and validates a graph document.
    pub fn from_json(document: &str) -> Result<Self, KgError> {
        let doc: GraphDocument =
            serde_json::from_str(document).map_err(|e| KgError::Parse(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(KgError::UnsupportedVersion(doc.format_version));
        }
        let edges = doc
            .edges
            .into_iter()
            .map(|e| {
                let weight = match (e.kind, e.weight) {
                    (EdgeKind::Contains, None) => 1.0,
                    (_, Some(w)) => w,
                    (EdgeKind::SimilarTo, None) => {
                        return Err(ValidationError::MissingWeight {
                            src: e.src,
                            dst: e.dst,
                        })
                    }
                };
                Ok(KgEdge {
                    src: e.src,
                    dst: e.dst,
                    kind: e.kind,
                    weight,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(doc.nodes, edges)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, KgError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| KgError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }

    /// Builds a graph from already-parsed parts, checking every invariant.
    pub fn new(nodes: Vec<KgNode>, edges: Vec<KgEdge>) -> Result<Self, ValidationError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(ValidationError::EmptyId);
            }
            if node.title.trim().is_empty() {
                return Err(ValidationError::EmptyTitle(node.id.clone()));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(ValidationError::DuplicateId(node.id.clone()));
            }
        }

        let n = nodes.len();
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut similar = vec![Vec::new(); n];
        let mut seen_pairs = HashSet::new();

        for edge in &edges {
            let src = lookup_endpoint(&index, edge, &edge.src)?;
            let dst = lookup_endpoint(&index, edge, &edge.dst)?;
            if src == dst {
                return Err(ValidationError::SelfLoop(edge.src.clone()));
            }
            if !(0.0..=1.0).contains(&edge.weight) {
                return Err(ValidationError::WeightOutOfRange {
                    src: edge.src.clone(),
                    dst: edge.dst.clone(),
                    weight: edge.weight,
                });
            }
            let (sk, dk) = (nodes[src].kind, nodes[dst].kind);
            match edge.kind {
                EdgeKind::Contains => {
                    let ok = matches!(
                        (sk, dk),
                        (NodeKind::Course, NodeKind::Topic) | (NodeKind::Topic, NodeKind::Material)
                    );
                    if !ok {
                        return Err(ValidationError::BadContains {
                            src: edge.src.clone(),
                            dst: edge.dst.clone(),
                        });
                    }
                    if edge.weight != 1.0 {
                        return Err(ValidationError::ContainsWeight {
                            src: edge.src.clone(),
                            dst: edge.dst.clone(),
                            weight: edge.weight,
                        });
                    }
                    if let Some(existing) = parent[dst] {
                        return Err(ValidationError::MultipleParents {
                            child: edge.dst.clone(),
                            first: nodes[existing].id.clone(),
                            second: edge.src.clone(),
                        });
                    }
                    parent[dst] = Some(src);
                    children[src].push(dst);
                }
                EdgeKind::SimilarTo => {
                    let ok = sk == dk && matches!(sk, NodeKind::Course | NodeKind::Material);
                    if !ok {
                        return Err(ValidationError::BadSimilarity {
                            src: edge.src.clone(),
                            dst: edge.dst.clone(),
                        });
                    }
                    let key = (src.min(dst), src.max(dst));
                    if !seen_pairs.insert(key) {
                        return Err(ValidationError::DuplicateSimilarity {
                            a: nodes[key.0].id.clone(),
                            b: nodes[key.1].id.clone(),
                        });
                    }
                    similar[src].push((dst, edge.weight));
                    similar[dst].push((src, edge.weight));
                }
            }
        }

        for list in &mut children {
            list.sort_by(|a, b| nodes[*a].id.cmp(&nodes[*b].id));
        }
        for list in &mut similar {
            list.sort_by(|a, b| neighbor_order(&nodes, *a, *b));
        }
        let tokens = nodes.iter().map(node_tokens).collect();

        Ok(Self {
            nodes,
            edges,
            index,
            parent,
            children,
            similar,
            tokens,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[KgEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get_node(&self, id: &str) -> Result<&KgNode, KgError> {
        self.idx(id).map(|i| &self.nodes[i])
    }

    /// Parent in the course/topic/material hierarchy, if any.
    pub fn parent(&self, id: &str) -> Result<Option<&KgNode>, KgError> {
        let i = self.idx(id)?;
        Ok(self.parent[i].map(|p| &self.nodes[p]))
    }

    /// Children ordered by id.
    pub fn children(&self, id: &str) -> Result<Vec<&KgNode>, KgError> {
        let i = self.idx(id)?;
        Ok(self.children[i].iter().map(|c| &self.nodes[*c]).collect())
    }

    /// Weight of the `similar_to` edge between two nodes, if one exists.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (ia, ib) = (*self.index.get(a)?, *self.index.get(b)?);
        self.similar[ia]
            .iter()
            .find(|(n, _)| *n == ib)
            .map(|(_, w)| *w)
    }

    /// Resolves a node by id, falling back to a unique case-insensitive title match.
    pub fn resolve(&self, id_or_title: &str) -> Result<&KgNode, KgError> {
        if let Some(&i) = self.index.get(id_or_title) {
            return Ok(&self.nodes[i]);
        }
        let mut matches = self
            .nodes
            .iter()
            .filter(|n| n.title.eq_ignore_ascii_case(id_or_title.trim()));
        match (matches.next(), matches.next()) {
            (Some(node), None) => Ok(node),
            _ => Err(KgError::NotFound(id_or_title.to_string())),
        }
    }

    /// `[course, topic, material]` for a material node.
    pub fn taxonomy_path(&self, material_id: &str) -> Result<[&KgNode; 3], KgError> {
        let m = self.idx(material_id)?;
        let material = &self.nodes[m];
        if material.kind != NodeKind::Material {
            return Err(KgError::NotMaterial {
                id: material.id.clone(),
                kind: material.kind,
            });
        }
        let t = self.parent[m].ok_or_else(|| KgError::Orphan(material.id.clone()))?;
        let c = self.parent[t].ok_or_else(|| KgError::Orphan(self.nodes[t].id.clone()))?;
        Ok([&self.nodes[c], &self.nodes[t], material])
    }

    /// Similarity neighbors with weight at least `threshold`, heaviest first,
    /// ties by ascending id, at most `k` of them.
    pub fn similarity_neighbors(
        &self,
        id: &str,
        threshold: f64,
        k: usize,
    ) -> Result<Vec<(&KgNode, f64)>, KgError> {
        check_threshold(threshold)?;
        let i = self.idx(id)?;
        Ok(self.similar[i]
            .iter()
            .filter(|(_, w)| *w >= threshold)
            .take(k)
            .map(|(n, w)| (&self.nodes[*n], *w))
            .collect())
    }

    /// Connected component of `id` over `similar_to` edges with weight at
    /// least `threshold`. Always contains `id` itself.
    pub fn community_of(&self, id: &str, threshold: f64) -> Result<BTreeSet<&str>, KgError> {
        check_threshold(threshold)?;
        let start = self.idx(id)?;
        let mut visited = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            for &(next, w) in &self.similar[cur] {
                if w >= threshold && visited.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        Ok(visited
            .into_iter()
            .map(|i| self.nodes[i].id.as_str())
            .collect())
    }

    /// Ranks nodes by how many distinct query tokens appear in their title
    /// or metadata. Ties go to more title matches, then ascending id.
    /// Nodes matching nothing are not returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit<'_>> {
        let query: BTreeSet<String> = text::tokenize(query).into_iter().collect();
        self.search_tokens(&query, k)
    }

    pub(crate) fn search_tokens(&self, query: &BTreeSet<String>, k: usize) -> Vec<SearchHit<'_>> {
        if query.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(usize, usize, usize)> = self
            .tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let score = query.iter().filter(|q| t.all.contains(*q)).count();
                (score > 0).then(|| {
                    (
                        i,
                        score,
                        query.iter().filter(|q| t.title.contains(*q)).count(),
                    )
                })
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(b.2.cmp(&a.2))
                .then_with(|| self.nodes[a.0].id.cmp(&self.nodes[b.0].id))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(i, score, _)| SearchHit {
                node: &self.nodes[i],
                score,
            })
            .collect()
    }

    fn idx(&self, id: &str) -> Result<usize, KgError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| KgError::NotFound(id.to_string()))
    }
}

fn lookup_endpoint(
    index: &HashMap<String, usize>,
    edge: &KgEdge,
    id: &str,
) -> Result<usize, ValidationError> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| ValidationError::DanglingEdge {
            src: edge.src.clone(),
            dst: edge.dst.clone(),
            missing: id.to_string(),
        })
}

fn neighbor_order(nodes: &[KgNode], a: (usize, f64), b: (usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| nodes[a.0].id.cmp(&nodes[b.0].id))
}

fn check_threshold(threshold: f64) -> Result<(), KgError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(KgError::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )))
    }
}

fn node_tokens(node: &KgNode) -> NodeTokens {
    let title: HashSet<String> = text::tokenize(&node.title).into_iter().collect();
    let mut all = title.clone();
    for value in node.metadata.values() {
        for s in value.strings() {
            all.extend(text::tokenize(s));
        }
    }
    NodeTokens { all, title }
}

/// How the recommendation page presents the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayFormat {
    Textual,
    Structural,
    Visual,
}

impl fmt::Display for DisplayFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisplayFormat::Textual => "textual",
            DisplayFormat::Structural => "structural",
            DisplayFormat::Visual => "visual",
        })
    }
}

/// An ordered recommendation produced upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPath {
    pub node_ids: Vec<String>,
    #[serde(default)]
    pub display_formats: Vec<DisplayFormat>,
}

#[derive(Deserialize)]
struct PathDocument {
    format_version: u32,
    #[serde(flatten)]
    path: LearningPath,
}

impl LearningPath {
    pub fn from_json(document: &str) -> Result<Self, KgError> {
        let doc: PathDocument =
            serde_json::from_str(document).map_err(|e| KgError::Parse(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(KgError::UnsupportedVersion(doc.format_version));
        }
        Ok(doc.path)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, KgError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| KgError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }

    /// Checks the path against a graph: nonempty, resolvable, no duplicates,
    /// only courses and materials.
    pub fn validate(&self, g: &KnowledgeGraph) -> Result<(), KgError> {
        if self.node_ids.is_empty() {
            return Err(KgError::InvalidPath("path is empty".into()));
        }
        let mut seen = HashSet::new();
        for id in &self.node_ids {
            let node = g.get_node(id)?;
            if node.kind == NodeKind::Topic {
                return Err(KgError::InvalidPath(format!("{id:?} is a topic")));
            }
            if !seen.insert(id.as_str()) {
                return Err(KgError::InvalidPath(format!("{id:?} appears twice")));
            }
        }
        Ok(())
    }
}

/// Shared, atomically replaceable graph. Readers take a snapshot and keep
/// using it even if a reload swaps in a new graph meanwhile.
#[derive(Debug)]
pub struct GraphHandle {
    current: RwLock<Arc<KnowledgeGraph>>,
}

impl GraphHandle {
    pub fn new(graph: KnowledgeGraph) -> Self {
        Self {
            current: RwLock::new(Arc::new(graph)),
        }
    }

    pub fn snapshot(&self) -> Arc<KnowledgeGraph> {
        self.current
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn replace(&self, graph: KnowledgeGraph) -> Arc<KnowledgeGraph> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *guard, Arc::new(graph))
    }
}

/// The graph bundled with the crate: computer-science and health courses
/// around two "data analysis" offerings.
pub const SAMPLE_GRAPH: &str = include_str!("../data/sample_graph.json");
pub const SAMPLE_PATH: &str = include_str!("../data/sample_path.json");

pub fn sample_graph() -> KnowledgeGraph {
    KnowledgeGraph::from_json(SAMPLE_GRAPH).expect("bundled sample graph is valid")
}

pub fn sample_path() -> LearningPath {
    LearningPath::from_json(SAMPLE_PATH).expect("bundled sample path is valid")
}
