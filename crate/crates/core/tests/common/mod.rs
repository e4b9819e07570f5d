//! Shared generators and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use pathchat_core::dialogue::{
    transition, ActionKind, DialogueEvent, DialoguePolicy, DialogueState, Phase,
};
use pathchat_core::intent::{IntentCategory, IntentPrediction};
use pathchat_core::kg::{EdgeKind, KgEdge, KgNode, KnowledgeGraph, MetaValue, NodeKind};
use rand::rngs::StdRng;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "data",
    "Analysis",
    "SQL",
    "python",
    "health",
    "privacy",
    "graph",
    "model",
    "ethics",
    "stats",
    "x-ray",
    "Ünïcode",
];

const TIED_WEIGHTS: &[f64] = &[0.0, 0.25, 0.5, 0.5, 0.75, 1.0];

fn phrase(rng: &mut StdRng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let seps = [" ", ", ", " - ", "/"];
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(seps[rng.gen_range(0..seps.len())]);
        }
        out.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    out
}

/// A valid graph of 1..=max_nodes nodes with orphans, tied weights and
/// heavy vocabulary overlap.
pub fn random_graph(rng: &mut StdRng, max_nodes: usize) -> KnowledgeGraph {
    let n = rng.gen_range(1..=max_nodes);
    let mut ids = HashSet::new();
    let mut nodes = Vec::with_capacity(n);
    while nodes.len() < n {
        let id = format!("{:x}", rng.gen_range(0..0xffffu32));
        if !ids.insert(id.clone()) {
            continue;
        }
        let kind = match rng.gen_range(0..100) {
            0..=14 => NodeKind::Course,
            15..=44 => NodeKind::Topic,
            _ => NodeKind::Material,
        };
        let mut metadata = BTreeMap::new();
        if rng.gen_bool(0.5) {
            metadata.insert(
                "description".to_string(),
                MetaValue::Text(phrase(rng, 0, 3)),
            );
        }
        if rng.gen_bool(0.3) {
            metadata.insert(
                "tags".to_string(),
                MetaValue::List(vec![phrase(rng, 1, 1), phrase(rng, 1, 2)]),
            );
        }
        nodes.push(KgNode {
            id,
            kind,
            title: phrase(rng, 1, 4),
            metadata,
        });
    }

    let of_kind = |k: NodeKind| -> Vec<usize> { (0..n).filter(|&i| nodes[i].kind == k).collect() };
    let (courses, topics, materials) = (
        of_kind(NodeKind::Course),
        of_kind(NodeKind::Topic),
        of_kind(NodeKind::Material),
    );
    let mut edges = Vec::new();
    let mut contain = |children: &[usize], parents: &[usize], rng: &mut StdRng| {
        for &c in children {
            if !parents.is_empty() && rng.gen_bool(0.8) {
                let p = parents[rng.gen_range(0..parents.len())];
                edges.push(KgEdge {
                    src: nodes[p].id.clone(),
                    dst: nodes[c].id.clone(),
                    kind: EdgeKind::Contains,
                    weight: 1.0,
                });
            }
        }
    };
    contain(&topics, &courses, rng);
    contain(&materials, &topics, rng);

    let mut pairs = HashSet::new();
    for pool in [&courses, &materials] {
        if pool.len() < 2 {
            continue;
        }
        for _ in 0..rng.gen_range(0..=pool.len() * 2) {
            let a = pool[rng.gen_range(0..pool.len())];
            let b = pool[rng.gen_range(0..pool.len())];
            if a == b || !pairs.insert((a.min(b), a.max(b))) {
                continue;
            }
            let weight = if rng.gen_bool(0.5) {
                TIED_WEIGHTS[rng.gen_range(0..TIED_WEIGHTS.len())]
            } else {
                rng.gen_range(0..=100) as f64 / 100.0
            };
            edges.push(KgEdge {
                src: nodes[a].id.clone(),
                dst: nodes[b].id.clone(),
                kind: EdgeKind::SimilarTo,
                weight,
            });
        }
    }
    KnowledgeGraph::new(nodes, edges).expect("generator only builds valid graphs")
}

pub fn random_query(rng: &mut StdRng) -> String {
    let mut q = phrase(rng, 1, 3);
    if rng.gen_bool(0.2) {
        q.push_str(" zzz");
    }
    if rng.gen_bool(0.3) {
        q = q.to_uppercase();
    }
    q
}

fn words_of(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// (id, score) pairs in the expected order.
pub fn oracle_search(g: &KnowledgeGraph, query: &str, k: usize) -> Vec<(String, usize)> {
    let q = words_of(query);
    let mut rows = Vec::new();
    for node in g.nodes() {
        let title = words_of(&node.title);
        let mut all = title.clone();
        for v in node.metadata.values() {
            match v {
                MetaValue::Text(s) => all.extend(words_of(s)),
                MetaValue::List(items) => items.iter().for_each(|s| all.extend(words_of(s))),
            }
        }
        let score = q.intersection(&all).count();
        let title_hits = q.intersection(&title).count();
        if score > 0 {
            rows.push((score, title_hits, node.id.clone()));
        }
    }
    rows.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    rows.into_iter().take(k).map(|(s, _, id)| (id, s)).collect()
}

pub fn oracle_neighbors(
    g: &KnowledgeGraph,
    id: &str,
    threshold: f64,
    k: usize,
) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::SimilarTo && e.weight >= threshold)
        .filter_map(|e| {
            if e.src == id {
                Some((e.dst.clone(), e.weight))
            } else if e.dst == id {
                Some((e.src.clone(), e.weight))
            } else {
                None
            }
        })
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    rows.truncate(k);
    rows
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Union-find over similarity edges at or above the threshold.
pub fn oracle_community(g: &KnowledgeGraph, id: &str, threshold: f64) -> BTreeSet<String> {
    let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    let pos = |s: &str| ids.iter().position(|x| *x == s).unwrap();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for e in g.edges() {
        if e.kind == EdgeKind::SimilarTo && e.weight >= threshold {
            let (a, b) = (
                find(&mut parent, pos(&e.src)),
                find(&mut parent, pos(&e.dst)),
            );
            parent[a] = b;
        }
    }
    let root = find(&mut parent, pos(id));
    (0..ids.len())
        .filter(|&i| find(&mut parent, i) == root)
        .map(|i| ids[i].to_string())
        .collect()
}

/// Abstract dialogue events. Messages carry their classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ev {
    /// Classified as "other".
    Vague,
    /// Supported category, confidence above the auto-confirm threshold.
    Sure,
    /// Supported category, confidence exactly at the threshold.
    AtThreshold,
    /// Supported category, confidence below the threshold.
    Unsure,
    Confirm,
    Reject,
    Completed,
    Failed,
    MentorRequest,
    MentorAccepted,
    Closed,
}

pub const ALPHABET: [Ev; 11] = [
    Ev::Vague,
    Ev::Sure,
    Ev::AtThreshold,
    Ev::Unsure,
    Ev::Confirm,
    Ev::Reject,
    Ev::Completed,
    Ev::Failed,
    Ev::MentorRequest,
    Ev::MentorAccepted,
    Ev::Closed,
];

pub fn real_event(ev: Ev, policy: &DialoguePolicy) -> (DialogueEvent, Option<IntentPrediction>) {
    let pred = |category, confidence| IntentPrediction {
        category,
        confidence,
        alternates: Vec::new(),
    };
    let msg = |p| (DialogueEvent::UserMessage("a question".into()), Some(p));
    let t = policy.auto_confirm_threshold;
    match ev {
        Ev::Vague => msg(pred(IntentCategory::Other, 0.9)),
        Ev::Sure => msg(pred(IntentCategory::Reason, (t + 1.0) / 2.0)),
        Ev::AtThreshold => msg(pred(IntentCategory::Relations, t)),
        Ev::Unsure => msg(pred(IntentCategory::Benefit, t / 2.0)),
        Ev::Confirm => (DialogueEvent::UserConfirms, None),
        Ev::Reject => (DialogueEvent::UserRejects, None),
        Ev::Completed => (DialogueEvent::TaskCompleted("answer".into()), None),
        Ev::Failed => (DialogueEvent::TaskFailed("down".into()), None),
        Ev::MentorRequest => (DialogueEvent::MentorRequestedByUser, None),
        Ev::MentorAccepted => (
            DialogueEvent::MentorAccepted {
                mentor: "m1".into(),
            },
            None,
        ),
        Ev::Closed => (DialogueEvent::SessionClosed, None),
    }
}

/// Applies an abstract event to the real state machine.
pub fn real_step(
    state: &DialogueState,
    ev: Ev,
    policy: &DialoguePolicy,
) -> Option<(DialogueState, ActionKind)> {
    let (event, pred) = real_event(ev, policy);
    transition(state, &event, pred.as_ref(), policy)
        .ok()
        .map(|(s, a)| (s, a.kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RefState {
    pub phase: Phase,
    pub count: u8,
    pub pending: bool,
}

impl RefState {
    pub const IDLE: RefState = RefState {
        phase: Phase::Idle,
        count: 0,
        pending: false,
    };

    pub fn of(s: &DialogueState) -> Self {
        Self {
            phase: s.phase,
            count: s.reprompt_count,
            pending: s.pending_intent.is_some(),
        }
    }
}

fn at(phase: Phase, count: u8) -> RefState {
    RefState {
        phase,
        count,
        pending: false,
    }
}

fn failure(count: u8) -> (RefState, ActionKind) {
    if count + 1 >= 3 {
        (at(Phase::Fallback, 3), ActionKind::SuggestMentor)
    } else {
        (at(Phase::Reprompting, count + 1), ActionKind::AskRephrase)
    }
}

fn classify(ev: Ev, count: u8) -> (RefState, ActionKind) {
    match ev {
        Ev::Vague => failure(count),
        Ev::Sure | Ev::AtThreshold => (at(Phase::ExecutingTask, 0), ActionKind::RunTask),
        Ev::Unsure => (
            RefState {
                phase: Phase::AwaitingConfirmation,
                count,
                pending: true,
            },
            ActionKind::AskConfirmation,
        ),
        _ => unreachable!(),
    }
}

/// Straight transcription of the rule table. `None` marks an event the
/// phase does not accept.
pub fn reference_step(s: RefState, ev: Ev) -> Option<(RefState, ActionKind)> {
    use Phase::*;
    let message = matches!(ev, Ev::Vague | Ev::Sure | Ev::AtThreshold | Ev::Unsure);
    Some(match (s.phase, ev) {
        (_, Ev::MentorRequest) => (at(MentorRequested, 0), ActionKind::CreateMentorRequest),
        (_, Ev::Closed) => (at(Idle, 0), ActionKind::NoOp),
        (Idle | Reprompting | AwaitingConfirmation, _) if message => classify(ev, s.count),
        (Fallback, Ev::Vague) => (s, ActionKind::SuggestMentor),
        (Fallback, _) if message => classify(ev, 0),
        (MentorRequested, _) if message => (s, ActionKind::BotReply),
        (GroupActive, _) if message => (s, ActionKind::NoOp),
        (AwaitingConfirmation, Ev::Confirm) => (at(ExecutingTask, 0), ActionKind::RunTask),
        (AwaitingConfirmation, Ev::Reject) => failure(s.count),
        (Fallback, Ev::Confirm) => (at(MentorRequested, 0), ActionKind::CreateMentorRequest),
        (Fallback, Ev::Reject) => (at(Idle, 0), ActionKind::BotReply),
        (ExecutingTask, Ev::Completed) => (at(Idle, 0), ActionKind::BotReply),
        (ExecutingTask, Ev::Failed) => (at(Fallback, 0), ActionKind::SuggestMentor),
        (MentorRequested, Ev::MentorAccepted) => (at(GroupActive, 0), ActionKind::BotReply),
        _ => return None,
    })
}

/// Every state reachable from idle, with its concrete representative.
pub fn reachable_states(policy: &DialoguePolicy) -> Vec<DialogueState> {
    let mut seen = HashSet::from([RefState::IDLE]);
    let mut out = vec![DialogueState::idle()];
    let mut i = 0;
    while i < out.len() {
        let cur = out[i].clone();
        for ev in ALPHABET {
            if let Some((next, _)) = real_step(&cur, ev, policy) {
                if seen.insert(RefState::of(&next)) {
                    out.push(next);
                }
            }
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BfsReport {
    pub depth: usize,
    pub transitions: usize,
    pub max_reprompt_count: u8,
}

/// Explores every event sequence up to `depth` (merging paths that reach the
/// same abstract state and vague-query streak) and checks, on each accepted
/// transition: state invariants, agreement with the reference table,
/// reprompt_count <= 3, and that a third consecutive vague query ends in
/// Fallback with SuggestMentor.
pub fn bfs_safety(policy: &DialoguePolicy, depth: usize) -> Result<BfsReport, String> {
    let mut seen = HashSet::from([(RefState::IDLE, 0u8)]);
    let mut frontier = vec![(DialogueState::idle(), 0u8)];
    let mut report = BfsReport {
        depth: 0,
        transitions: 0,
        max_reprompt_count: 0,
    };
    for level in 1..=depth {
        let mut next_frontier = Vec::new();
        for (state, streak) in &frontier {
            for ev in ALPHABET {
                let real = real_step(state, ev, policy);
                let expected = reference_step(RefState::of(state), ev);
                let got = real.as_ref().map(|(s, a)| (RefState::of(s), *a));
                if got != expected {
                    return Err(format!(
                        "{:?} + {ev:?}: got {got:?}, reference {expected:?}",
                        RefState::of(state)
                    ));
                }
                let Some((next, action)) = real else { continue };
                report.transitions += 1;
                next.check().map_err(|e| e.to_string())?;
                report.max_reprompt_count = report.max_reprompt_count.max(next.reprompt_count);
                if next.reprompt_count > 3 {
                    return Err(format!(
                        "reprompt_count {} after {ev:?}",
                        next.reprompt_count
                    ));
                }
                let classifying = matches!(
                    state.phase,
                    Phase::Idle
                        | Phase::Reprompting
                        | Phase::AwaitingConfirmation
                        | Phase::Fallback
                );
                let streak = if ev == Ev::Vague && classifying {
                    (*streak + 1).min(3)
                } else {
                    0
                };
                if streak == 3
                    && (next.phase != Phase::Fallback || action != ActionKind::SuggestMentor)
                {
                    return Err(format!(
                        "third vague query from {:?} gave {:?} {action}",
                        state.phase, next.phase
                    ));
                }
                if seen.insert((RefState::of(&next), streak)) {
                    next_frontier.push((next, streak));
                }
            }
        }
        report.depth = level;
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    Ok(report)
}

/// Fewest events from `start` until a CreateMentorRequest action, searching
/// at most `limit` events deep.
pub fn events_to_mentor_request(
    start: &DialogueState,
    policy: &DialoguePolicy,
    limit: usize,
) -> Option<usize> {
    let mut frontier = vec![start.clone()];
    for steps in 1..=limit {
        let mut next_frontier = Vec::new();
        for state in &frontier {
            for ev in ALPHABET {
                if let Some((next, action)) = real_step(state, ev, policy) {
                    if action == ActionKind::CreateMentorRequest {
                        return Some(steps);
                    }
                    next_frontier.push(next);
                }
            }
        }
        frontier = next_frontier;
    }
    None
}

/// One context per category over the bundled fixtures, with a short chat
/// history so every block source can appear.
pub fn sample_contexts() -> Vec<(IntentCategory, pathchat_core::context::PromptContext)> {
    use pathchat_core::context::{ContextBuilder, ContextInput, ExpertConfig, HistoryLine};
    let g = pathchat_core::kg::sample_graph();
    let path = pathchat_core::kg::sample_path();
    let builder = ContextBuilder::new(ExpertConfig::bundled());
    let history: Vec<HistoryLine> = (0..3)
        .map(|i| HistoryLine {
            sender: format!("user{i}"),
            text: format!("message number {i}"),
        })
        .collect();
    IntentCategory::ALL
        .iter()
        .map(|&category| {
            let input = ContextInput {
                category,
                utterance: "Why is pandas groupby useful for me?",
                path: &path,
                focus: Some("pandas-groupby"),
                history: &history,
            };
            (
                category,
                builder.build(&g, input).expect("bundled fixtures build"),
            )
        })
        .collect()
}

fn block_line(b: &pathchat_core::context::KgContentBlock) -> String {
    format!("\n[{}] {}\n", b.source, b.text)
}

/// Section order, verbatim rules, and whole-block dropping over `budgets`
/// random budgets between the mandatory size and the full size.
pub fn check_prompt(
    ctx: &pathchat_core::context::PromptContext,
    expert: &pathchat_core::context::ExpertConfig,
    rng: &mut StdRng,
    budgets: usize,
) -> Result<(), String> {
    use pathchat_core::context::SECTION_HEADERS;
    let full = ctx.render(usize::MAX).map_err(|e| e.to_string())?;
    let mut last = 0;
    for h in SECTION_HEADERS {
        let at = full
            .find(&format!("{h}\n"))
            .ok_or(format!("missing header {h}"))?;
        if at < last {
            return Err(format!("header {h} out of order"));
        }
        last = at;
    }
    let rules_at = full.find(SECTION_HEADERS[2]).unwrap();
    let kg_at = full.find(SECTION_HEADERS[3]).unwrap();
    for rule in &expert.rules {
        let at = full
            .find(rule.as_str())
            .ok_or(format!("rule not verbatim: {rule}"))?;
        if !(rules_at..kg_at).contains(&at) {
            return Err(format!("rule outside the rules section: {rule}"));
        }
    }
    for b in &ctx.kg_blocks {
        if !full.contains(&block_line(b)) {
            return Err(format!("{} block missing at unlimited budget", b.source));
        }
    }

    let mandatory = ctx
        .render(0)
        .err()
        .and_then(|e| match e {
            pathchat_core::context::ContextError::BudgetTooSmall { needed, .. } => Some(needed),
            _ => None,
        })
        .unwrap_or(0);
    let full_len = full.chars().count();
    let mut samples: Vec<usize> = (0..budgets)
        .map(|_| rng.gen_range(mandatory..=full_len + 50))
        .collect();
    samples.extend([mandatory, full_len]);
    samples.sort_unstable();
    let mut previous: Option<Vec<bool>> = None;
    for budget in samples {
        let text = ctx
            .render(budget)
            .map_err(|e| format!("budget {budget}: {e}"))?;
        if text.chars().count() > budget {
            return Err(format!(
                "budget {budget} exceeded: {}",
                text.chars().count()
            ));
        }
        if !expert.rules.iter().all(|r| text.contains(r.as_str())) {
            return Err(format!("budget {budget} lost a rule"));
        }
        let kept: Vec<bool> = ctx
            .kg_blocks
            .iter()
            .map(|b| text.contains(&block_line(b)))
            .collect();
        for (i, bi) in ctx.kg_blocks.iter().enumerate() {
            for (j, bj) in ctx.kg_blocks.iter().enumerate() {
                let j_more_important =
                    bj.priority < bi.priority || (bj.priority == bi.priority && j < i);
                if kept[i] && j_more_important && !kept[j] {
                    return Err(format!(
                        "budget {budget}: kept {} but dropped {}",
                        bi.source, bj.source
                    ));
                }
            }
        }
        if let Some(prev) = &previous {
            if prev.iter().zip(&kept).any(|(p, k)| *p && !*k) {
                return Err(format!("budget {budget}: a larger budget dropped a block"));
            }
        }
        if budget >= full_len && text != full {
            return Err(format!("budget {budget}: full prompt fits but was cut"));
        }
        previous = Some(kept);
    }
    Ok(())
}

/// Published per-class (precision, recall, F1), classes 1 to 7.
pub const TABLE_1: [(f64, f64, f64); 7] = [
    (0.50, 1.0, 0.67),
    (0.89, 1.0, 0.94),
    (0.68, 1.0, 0.81),
    (0.86, 1.0, 0.92),
    (1.0, 0.88, 0.94),
    (1.0, 0.77, 0.87),
    (0.89, 1.0, 0.94),
];

pub const TABLE_1_TOLERANCE: f64 = 0.01;

pub const KG_LATENCY_BOUND: std::time::Duration = std::time::Duration::from_millis(900);

/// Slowest `gather_kg_content` call per category over `repeats` calls on a
/// synthetic graph of at least `nodes` nodes.
pub fn kg_latency(nodes: usize, repeats: usize) -> Vec<(IntentCategory, std::time::Duration)> {
    use pathchat_core::context::{gather_kg_content, RetrievalSettings};
    use pathchat_core::synth::{synthetic_graph, synthetic_path, SynthSpec};
    let g = synthetic_graph(SynthSpec::with_nodes(nodes), 11);
    assert!(g.len() >= nodes);
    let path = synthetic_path(&g);
    let focus = path.node_ids.last().cloned();
    let settings = RetrievalSettings::default();
    IntentCategory::ALL
        .iter()
        .map(|&c| {
            let mut worst = std::time::Duration::ZERO;
            for _ in 0..repeats {
                let start = std::time::Instant::now();
                let blocks = gather_kg_content(c, &path, focus.as_deref(), &g, &settings)
                    .expect("synthetic graph gathers");
                worst = worst.max(start.elapsed());
                std::hint::black_box(blocks);
            }
            (c, worst)
        })
        .collect()
}

/// Compares search, neighbors and communities against the brute-force
/// versions: ten random queries plus every node at several thresholds.
pub fn oracle_mismatch(g: &KnowledgeGraph, rng: &mut StdRng) -> Option<String> {
    const THRESHOLDS: [f64; 5] = [0.0, 0.25, 0.5, 0.73, 1.0];
    for _ in 0..10 {
        let q = random_query(rng);
        let k = rng.gen_range(0..=g.len() + 2);
        let got: Vec<(String, usize)> = g
            .search(&q, k)
            .iter()
            .map(|h| (h.node.id.clone(), h.score))
            .collect();
        if got != oracle_search(g, &q, k) {
            return Some(format!("search {q:?} k={k}"));
        }
    }
    for node in g.nodes() {
        for t in THRESHOLDS {
            let k = rng.gen_range(0..=12);
            let got: Vec<(String, f64)> = g
                .similarity_neighbors(&node.id, t, k)
                .ok()?
                .into_iter()
                .map(|(n, w)| (n.id.clone(), w))
                .collect();
            if got != oracle_neighbors(g, &node.id, t, k) {
                return Some(format!("neighbors of {} t={t} k={k}", node.id));
            }
            let community: BTreeSet<String> = g
                .community_of(&node.id, t)
                .ok()?
                .into_iter()
                .map(str::to_string)
                .collect();
            if community != oracle_community(g, &node.id, t) {
                return Some(format!("community of {} t={t}", node.id));
            }
        }
    }
    None
}
