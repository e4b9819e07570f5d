//! The explanation bot: classifies a student message, drives the dialogue
//! state machine, and when a task runs, builds the prompt and queries the
//! language model.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::{Config, ConfigError, IntentBackendKind, LlmBackendKind};
use crate::context::{
    ContextBuilder, ContextError, ContextInput, HistoryLine, DEFAULT_BUDGET_CHARS,
    DEFAULT_HISTORY_WINDOW,
};
use crate::dialogue::{
    transition, ActionKind, DialogueAction, DialogueError, DialogueEvent, DialoguePolicy,
    DialogueState, Phase, TaskRecord,
};
use crate::intent::{
    classify, IntentBackend, IntentCategory, IntentError, IntentPrediction, LexiconClassifier,
    LlmClassifier,
};
use crate::kg::{GraphHandle, KnowledgeGraph, LearningPath};
use crate::llm::{
    Attachment, CompletionRequest, GatewayLimits, HttpBackend, LlmError, LlmGateway, MockLlm,
};
use crate::text;

const CONFIRM_WORDS: &[&str] = &[
    "correct", "ok", "okay", "right", "sure", "y", "yeah", "yep", "yes",
];
const REJECT_WORDS: &[&str] = &["incorrect", "n", "no", "nope", "not", "wrong"];

/// Words too generic to pick a focus node on their own.
const GENERIC_WORDS: &[&str] = &[
    "course",
    "courses",
    "learn",
    "learning",
    "material",
    "materials",
    "path",
    "recommend",
    "recommended",
    "recommendation",
    "topic",
    "topics",
    "what",
    "why",
    "how",
];

#[derive(Debug, thiserror::Error)]
pub enum BotError {
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Intent(#[from] IntentError),
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Size limits applied to every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotLimits {
    pub budget_chars: usize,
    pub max_response_chars: usize,
    pub history_window: usize,
}

impl Default for BotLimits {
    fn default() -> Self {
        Self {
            budget_chars: DEFAULT_BUDGET_CHARS,
            max_response_chars: 2000,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }
}

/// Everything one student message caused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub state: DialogueState,
    pub event: DialogueEvent,
    pub prediction: Option<IntentPrediction>,
    /// In order; a task produces `RunTask` followed by its outcome.
    pub actions: Vec<DialogueAction>,
    pub elapsed: Duration,
}

impl Turn {
    pub fn action_kinds(&self) -> Vec<ActionKind> {
        self.actions.iter().map(|a| a.kind).collect()
    }

    /// Messages meant for the chat: everything except `RunTask` and `NoOp`.
    pub fn replies(&self) -> impl Iterator<Item = &DialogueAction> {
        self.actions
            .iter()
            .filter(|a| !matches!(a.kind, ActionKind::RunTask | ActionKind::NoOp))
    }

    pub fn requests_mentor(&self) -> bool {
        self.actions
            .iter()
            .any(|a| a.kind == ActionKind::CreateMentorRequest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnswer {
    pub category: IntentCategory,
    pub focus: Option<String>,
    pub text: String,
    pub backend_id: String,
}

pub struct ExplainerBot {
    graph: Arc<GraphHandle>,
    path: LearningPath,
    builder: ContextBuilder,
    classifier: Arc<dyn IntentBackend>,
    gateway: Arc<LlmGateway>,
    policy: DialoguePolicy,
    limits: BotLimits,
    mentor_mention: String,
}

impl std::fmt::Debug for ExplainerBot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExplainerBot")
            .field("classifier", &self.classifier.name())
            .field("llm", &self.gateway.backend_id())
            .field("limits", &self.limits)
            .finish_non_exhaustive()
    }
}

impl ExplainerBot {
    pub fn new(
        graph: Arc<GraphHandle>,
        path: LearningPath,
        builder: ContextBuilder,
        classifier: Arc<dyn IntentBackend>,
        gateway: Arc<LlmGateway>,
    ) -> Self {
        Self {
            graph,
            path,
            builder,
            classifier,
            gateway,
            policy: DialoguePolicy::default(),
            limits: BotLimits::default(),
            mentor_mention: "@mentor".into(),
        }
    }

    /// Bundled graph, path, expert config and lexicon baseline, answering
    /// through `gateway`.
    pub fn sample(gateway: Arc<LlmGateway>) -> Self {
        Self::new(
            Arc::new(GraphHandle::new(crate::kg::sample_graph())),
            crate::kg::sample_path(),
            ContextBuilder::new(crate::context::ExpertConfig::bundled()),
            Arc::new(LexiconClassifier::bundled()),
            gateway,
        )
    }

    /// Loads every asset named in `config` and wires the selected backends.
    pub fn from_config(config: &Config) -> Result<Self, ConfigError> {
        let graph = config.load_graph()?;
        let path = config.load_learning_path()?;
        path.validate(&graph).map_err(|e| ConfigError::Asset {
            what: "learning path",
            path: config
                .learning_path
                .as_ref()
                .map_or("(bundled)".into(), |p| p.display().to_string()),
            message: e.to_string(),
        })?;
        let limits = GatewayLimits {
            attachment_cap: config.attachment_cap_bytes,
            max_in_flight: config.llm.max_in_flight,
        };
        let gateway = Arc::new(match config.llm.backend {
            LlmBackendKind::Mock => LlmGateway::with_limits(MockLlm::new(), limits),
            LlmBackendKind::Http => {
                LlmGateway::with_limits(HttpBackend::new(config.llm.http.clone()), limits)
            }
        });
        let baseline =
            LexiconClassifier::new(config.load_lexicon()?).with_floor(config.other_floor);
        let classifier: Arc<dyn IntentBackend> = match config.intent_backend {
            IntentBackendKind::Baseline => Arc::new(baseline),
            IntentBackendKind::Llm => Arc::new(LlmClassifier::new(gateway.clone(), baseline)),
        };
        let mut bot = Self::new(
            Arc::new(GraphHandle::new(graph)),
            path,
            config.context_builder()?,
            classifier,
            gateway,
        )
        .with_policy(config.dialogue_policy())
        .with_limits(BotLimits {
            budget_chars: config.budget_chars,
            max_response_chars: config.llm.max_response_chars,
            history_window: config.history_window,
        });
        bot.mentor_mention = config.mentor_mention.clone();
        Ok(bot)
    }

    pub fn with_policy(mut self, policy: DialoguePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_limits(mut self, limits: BotLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_mentor_mention(mut self, token: impl Into<String>) -> Self {
        self.mentor_mention = token.into();
        self
    }

    pub fn graph(&self) -> &Arc<GraphHandle> {
        &self.graph
    }

    pub fn path(&self) -> &LearningPath {
        &self.path
    }

    pub fn gateway(&self) -> &Arc<LlmGateway> {
        &self.gateway
    }

    pub fn limits(&self) -> BotLimits {
        self.limits
    }

    pub fn policy(&self) -> &DialoguePolicy {
        &self.policy
    }

    /// Maps a raw student message to a dialogue event for the current phase.
    pub fn event_for_message(&self, state: &DialogueState, message: &str) -> DialogueEvent {
        if text::contains_word_token(message, &self.mentor_mention) {
            return DialogueEvent::MentorRequestedByUser;
        }
        if matches!(state.phase, Phase::AwaitingConfirmation | Phase::Fallback) {
            let tokens = text::tokenize(message);
            if let (Some(first), true) = (tokens.first(), tokens.len() <= 3) {
                if CONFIRM_WORDS.contains(&first.as_str()) {
                    return DialogueEvent::UserConfirms;
                }
                if REJECT_WORDS.contains(&first.as_str()) {
                    return DialogueEvent::UserRejects;
                }
            }
        }
        DialogueEvent::UserMessage(message.trim().to_string())
    }

    /// Handles a free-text student message in a solo session.
    pub fn handle_user_message(
        &self,
        state: &DialogueState,
        message: &str,
        attachments: &[Attachment],
    ) -> Result<Turn, BotError> {
        let event = self.event_for_message(state, message);
        self.handle_event(state, event, attachments)
    }

    /// Applies an event and, if it starts a task, runs the task to completion.
    pub fn handle_event(
        &self,
        state: &DialogueState,
        event: DialogueEvent,
        attachments: &[Attachment],
    ) -> Result<Turn, BotError> {
        let started = Instant::now();
        let prediction = match (&event, state.phase) {
            (
                DialogueEvent::UserMessage(m),
                Phase::Idle | Phase::Reprompting | Phase::AwaitingConfirmation | Phase::Fallback,
            ) => Some(classify(m, self.classifier.as_ref())?),
            _ => None,
        };
        let (mut next, action) = transition(state, &event, prediction.as_ref(), &self.policy)?;
        let mut actions = vec![action];
        if let Some(task) = actions[0]
            .task
            .clone()
            .filter(|_| actions[0].kind == ActionKind::RunTask)
        {
            let outcome = match self.run_task(&task, None, &[], attachments) {
                Ok(answer) => DialogueEvent::TaskCompleted(answer.text),
                Err(e) => {
                    log::warn!("task for category {} failed: {e}", task.category);
                    DialogueEvent::TaskFailed(e.to_string())
                }
            };
            let (after, action) = transition(&next, &outcome, None, &self.policy)?;
            next = after;
            actions.push(action);
        }
        Ok(Turn {
            state: next,
            event,
            prediction,
            actions,
            elapsed: started.elapsed(),
        })
    }

    /// Answers an @-mention in a group session. The mention token is removed
    /// before classification; the last `history_window` lines of `history`
    /// are included in the prompt. No confirmation round-trip happens here.
    pub fn answer_mention(
        &self,
        message: &str,
        bot_mention: &str,
        history: &[HistoryLine],
        attachments: &[Attachment],
    ) -> Result<TaskAnswer, TaskError> {
        let question = text::strip_word_token(message, bot_mention);
        let question = if question.trim().is_empty() {
            message.to_string()
        } else {
            question
        };
        let category = classify(&question, self.classifier.as_ref())
            .map(|p| p.category)
            .unwrap_or(IntentCategory::Other);
        let window = &history[history.len().saturating_sub(self.limits.history_window)..];
        self.run_task(
            &TaskRecord {
                category,
                utterance: question,
            },
            None,
            window,
            attachments,
        )
    }

    /// Builds the prompt for a task and queries the model.
    pub fn run_task(
        &self,
        task: &TaskRecord,
        focus: Option<&str>,
        history: &[HistoryLine],
        attachments: &[Attachment],
    ) -> Result<TaskAnswer, TaskError> {
        let prompt = self.render_prompt(task, focus, history)?;
        let request = CompletionRequest::new(prompt.text, self.limits.max_response_chars)
            .with_attachments(attachments.to_vec());
        let response = self.gateway.complete(&request)?;
        Ok(TaskAnswer {
            category: task.category,
            focus: prompt.focus,
            text: response.text,
            backend_id: response.backend_id,
        })
    }

    /// The exact prompt a task would send.
    pub fn render_prompt(
        &self,
        task: &TaskRecord,
        focus: Option<&str>,
        history: &[HistoryLine],
    ) -> Result<RenderedPrompt, ContextError> {
        let g = self.graph.snapshot();
        let focus = match focus {
            Some(f) => Some(g.resolve(f)?.id.clone()),
            None => resolve_focus(&g, &self.path, task.category, &task.utterance),
        };
        let ctx = self.builder.build(
            &g,
            ContextInput {
                category: task.category,
                utterance: &task.utterance,
                path: &self.path,
                focus: focus.as_deref(),
                history,
            },
        )?;
        Ok(RenderedPrompt {
            text: ctx.render(self.limits.budget_chars)?,
            focus,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub focus: Option<String>,
}

/// Picks the node a question is about. A path node whose full title occurs
/// in the question wins (longest title first); otherwise the best token-overlap
/// hit, preferring path nodes among equal scores. Categories 3 to 5 fall back
/// to the first path node so the task can still run.
pub fn resolve_focus(
    g: &KnowledgeGraph,
    path: &LearningPath,
    category: IntentCategory,
    utterance: &str,
) -> Option<String> {
    let lowered = utterance.to_lowercase();
    let on_path: BTreeSet<&str> = path.node_ids.iter().map(String::as_str).collect();

    let by_title = path
        .node_ids
        .iter()
        .filter_map(|id| g.get_node(id).ok())
        .filter(|n| lowered.contains(&n.title.to_lowercase()))
        .max_by(|a, b| {
            a.title
                .len()
                .cmp(&b.title.len())
                .then_with(|| b.id.cmp(&a.id))
        });
    if let Some(node) = by_title {
        return Some(node.id.clone());
    }

    let query: BTreeSet<String> = text::content_tokens(utterance)
        .into_iter()
        .filter(|t| !GENERIC_WORDS.contains(&t.as_str()))
        .collect();
    let hits = g.search_tokens(&query, g.len());
    if let Some(best) = hits.first() {
        let chosen = hits
            .iter()
            .take_while(|h| h.score == best.score)
            .find(|h| on_path.contains(h.node.id.as_str()))
            .unwrap_or(best);
        return Some(chosen.node.id.clone());
    }

    matches!(
        category,
        IntentCategory::Benefit | IntentCategory::Relations | IntentCategory::AdditionalInfo
    )
    .then(|| path.node_ids.first().cloned())
    .flatten()
}
