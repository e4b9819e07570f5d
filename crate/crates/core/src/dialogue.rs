//! Per-session dialogue state machine.
//!
//! [`transition`] is a pure function from `(state, event, prediction)` to the
//! next state plus the action the bot should take. Supported questions are
//! either run directly (confident prediction) or confirmed first; vague
//! questions are re-prompted, and after three consecutive failures the bot
//! suggests a human mentor. A mentor request can be raised from any phase.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::intent::{IntentCategory, IntentPrediction};

pub const DEFAULT_AUTO_CONFIRM_THRESHOLD: f64 = 0.75;
pub const MAX_REPROMPTS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    AwaitingConfirmation,
    Reprompting,
    ExecutingTask,
    Fallback,
    MentorRequested,
    GroupActive,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Idle,
        Phase::AwaitingConfirmation,
        Phase::Reprompting,
        Phase::ExecutingTask,
        Phase::Fallback,
        Phase::MentorRequested,
        Phase::GroupActive,
    ];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A question waiting for the student's yes/no.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub prediction: IntentPrediction,
    pub utterance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskRecord {
    pub category: IntentCategory,
    pub utterance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub phase: Phase,
    pub reprompt_count: u8,
    /// Present exactly while awaiting confirmation.
    pub pending_intent: Option<PendingQuestion>,
    pub last_task: Option<TaskRecord>,
}

impl Default for DialogueState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            reprompt_count: 0,
            pending_intent: None,
            last_task: None,
        }
    }
}

impl DialogueState {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn check(&self) -> Result<(), DialogueError> {
        if self.reprompt_count > MAX_REPROMPTS {
            return Err(DialogueError::InvalidState(format!(
                "reprompt_count {} above {MAX_REPROMPTS}",
                self.reprompt_count
            )));
        }
        if self.pending_intent.is_some() != (self.phase == Phase::AwaitingConfirmation) {
            return Err(DialogueError::InvalidState(format!(
                "pending intent must be present iff awaiting confirmation (phase {})",
                self.phase
            )));
        }
        if matches!(self.phase, Phase::Idle | Phase::ExecutingTask) && self.reprompt_count != 0 {
            return Err(DialogueError::InvalidState(format!(
                "reprompt_count must be 0 in {}",
                self.phase
            )));
        }
        Ok(())
    }

    fn enter(&self, phase: Phase, reprompt_count: u8) -> Self {
        Self {
            phase,
            reprompt_count,
            pending_intent: None,
            last_task: self.last_task.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum DialogueEvent {
    UserMessage(String),
    UserConfirms,
    UserRejects,
    /// The task finished; carries the answer text.
    TaskCompleted(String),
    /// The task failed; carries the reason.
    TaskFailed(String),
    MentorRequestedByUser,
    MentorAccepted {
        mentor: String,
    },
    SessionClosed,
}

impl DialogueEvent {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DialogueEvent::UserMessage(_) => "UserMessage",
            DialogueEvent::UserConfirms => "UserConfirms",
            DialogueEvent::UserRejects => "UserRejects",
            DialogueEvent::TaskCompleted(_) => "TaskCompleted",
            DialogueEvent::TaskFailed(_) => "TaskFailed",
            DialogueEvent::MentorRequestedByUser => "MentorRequestedByUser",
            DialogueEvent::MentorAccepted { .. } => "MentorAccepted",
            DialogueEvent::SessionClosed => "SessionClosed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    AskConfirmation,
    AskRephrase,
    SuggestMentor,
    RunTask,
    BotReply,
    CreateMentorRequest,
    NoOp,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "AskConfirmation" => ActionKind::AskConfirmation,
            "AskRephrase" => ActionKind::AskRephrase,
            "SuggestMentor" => ActionKind::SuggestMentor,
            "RunTask" => ActionKind::RunTask,
            "BotReply" => ActionKind::BotReply,
            "CreateMentorRequest" => ActionKind::CreateMentorRequest,
            "NoOp" => ActionKind::NoOp,
            other => return Err(format!("unknown action kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueAction {
    pub kind: ActionKind,
    /// User-facing message; empty for `NoOp`.
    pub text: String,
    pub task: Option<TaskRecord>,
}

impl DialogueAction {
    fn new(kind: ActionKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            task: None,
        }
    }
}

/// User-facing texts, keyed by situation. `{intent}` and `{tasks}` are
/// substituted where they appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionTemplates {
    pub ask_confirmation: String,
    pub ask_rephrase: String,
    pub suggest_mentor: String,
    pub task_failed: String,
    pub run_task: String,
    pub mentor_requested: String,
    pub mentor_waiting: String,
    pub mentor_joined: String,
    pub mentor_declined: String,
}

impl Default for ActionTemplates {
    fn default() -> Self {
        Self {
            ask_confirmation: "I understood your question as: {intent}. Is that right?".into(),
            ask_rephrase: "I'm not sure I understood your question. Could you rephrase it? \
                           I can help with questions about:\n{tasks}"
                .into(),
            suggest_mentor: "I still could not understand your question. \
                             Would you like me to connect you with a human mentor?"
                .into(),
            task_failed: "I could not answer that question right now. \
                          Would you like me to connect you with a human mentor?"
                .into(),
            run_task: "Let me look into {intent}.".into(),
            mentor_requested: "Your mentoring request has been forwarded to the available mentors."
                .into(),
            mentor_waiting:
                "A mentor has been notified. Please wait until one accepts your request.".into(),
            mentor_joined: "A mentor has joined. You can chat together here; \
                            mention @bot whenever you want me to answer."
                .into(),
            mentor_declined:
                "No problem. Feel free to ask another question about your learning path.".into(),
        }
    }
}

impl ActionTemplates {
    pub fn confirmation(&self, category: IntentCategory) -> String {
        self.ask_confirmation
            .replace("{intent}", category.description().trim_end_matches('.'))
    }

    pub fn rephrase(&self) -> String {
        let tasks = IntentCategory::ALL
            .iter()
            .filter(|c| c.is_supported())
            .map(|c| format!("- {}", c.topic()))
            .collect::<Vec<_>>()
            .join("\n");
        self.ask_rephrase.replace("{tasks}", &tasks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialoguePolicy {
    pub auto_confirm_threshold: f64,
    pub templates: ActionTemplates,
}

impl Default for DialoguePolicy {
    fn default() -> Self {
        Self {
            auto_confirm_threshold: DEFAULT_AUTO_CONFIRM_THRESHOLD,
            templates: ActionTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DialogueError {
    #[error("event {event} is not possible in phase {phase}")]
    InvalidEvent { phase: Phase, event: &'static str },
    #[error("a user message needs an intent prediction in phase {0}")]
    MissingPrediction(Phase),
    #[error("user message is empty")]
    EmptyMessage,
    #[error("invalid dialogue state: {0}")]
    InvalidState(String),
}

/// Computes the next state and action. Pure: identical inputs always yield
/// identical outputs, and the result satisfies [`DialogueState::check`].
pub fn transition(
    state: &DialogueState,
    event: &DialogueEvent,
    prediction: Option<&IntentPrediction>,
    policy: &DialoguePolicy,
) -> Result<(DialogueState, DialogueAction), DialogueError> {
    state.check()?;
    let t = &policy.templates;
    let invalid = || DialogueError::InvalidEvent {
        phase: state.phase,
        event: event.kind_name(),
    };

    let outcome = match (state.phase, event) {
        (_, DialogueEvent::MentorRequestedByUser) => (
            state.enter(Phase::MentorRequested, 0),
            DialogueAction::new(ActionKind::CreateMentorRequest, &t.mentor_requested),
        ),
        (_, DialogueEvent::SessionClosed) => (
            state.enter(Phase::Idle, 0),
            DialogueAction::new(ActionKind::NoOp, ""),
        ),

        (phase, DialogueEvent::UserMessage(text)) => {
            if text.trim().is_empty() {
                return Err(DialogueError::EmptyMessage);
            }
            match phase {
                Phase::Idle
                | Phase::Reprompting
                | Phase::AwaitingConfirmation
                | Phase::Fallback => {
                    let prediction = prediction.ok_or(DialogueError::MissingPrediction(phase))?;
                    if phase == Phase::Fallback {
                        if prediction.category == IntentCategory::Other {
                            (
                                state.enter(Phase::Fallback, state.reprompt_count),
                                DialogueAction::new(ActionKind::SuggestMentor, &t.suggest_mentor),
                            )
                        } else {
                            interpret(state, 0, prediction, text, policy)
                        }
                    } else {
                        interpret(state, state.reprompt_count, prediction, text, policy)
                    }
                }
                Phase::MentorRequested => (
                    state.enter(Phase::MentorRequested, state.reprompt_count),
                    DialogueAction::new(ActionKind::BotReply, &t.mentor_waiting),
                ),
                // In group sessions the bot only answers @-mentions, handled by the chat layer.
                Phase::GroupActive => (
                    state.enter(Phase::GroupActive, state.reprompt_count),
                    DialogueAction::new(ActionKind::NoOp, ""),
                ),
                Phase::ExecutingTask => return Err(invalid()),
            }
        }

        (Phase::AwaitingConfirmation, DialogueEvent::UserConfirms) => {
            let pending = state.pending_intent.as_ref().expect("checked invariant");
            run_task(
                state,
                pending.prediction.category,
                &pending.utterance,
                policy,
            )
        }
        (Phase::AwaitingConfirmation, DialogueEvent::UserRejects) => {
            count_failure(state, state.reprompt_count, policy)
        }
        (Phase::Fallback, DialogueEvent::UserConfirms) => (
            state.enter(Phase::MentorRequested, 0),
            DialogueAction::new(ActionKind::CreateMentorRequest, &t.mentor_requested),
        ),
        (Phase::Fallback, DialogueEvent::UserRejects) => (
            state.enter(Phase::Idle, 0),
            DialogueAction::new(ActionKind::BotReply, &t.mentor_declined),
        ),

        (Phase::ExecutingTask, DialogueEvent::TaskCompleted(answer)) => (
            state.enter(Phase::Idle, 0),
            DialogueAction::new(ActionKind::BotReply, answer.clone()),
        ),
        (Phase::ExecutingTask, DialogueEvent::TaskFailed(_)) => (
            state.enter(Phase::Fallback, 0),
            DialogueAction::new(ActionKind::SuggestMentor, &t.task_failed),
        ),

        (Phase::MentorRequested, DialogueEvent::MentorAccepted { .. }) => (
            state.enter(Phase::GroupActive, 0),
            DialogueAction::new(ActionKind::BotReply, &t.mentor_joined),
        ),

        _ => return Err(invalid()),
    };
    debug_assert!(outcome.0.check().is_ok(), "{:?}", outcome.0);
    Ok(outcome)
}

/// Routes a classified message given the current failure count.
fn interpret(
    state: &DialogueState,
    count: u8,
    prediction: &IntentPrediction,
    utterance: &str,
    policy: &DialoguePolicy,
) -> (DialogueState, DialogueAction) {
    if prediction.category == IntentCategory::Other {
        return count_failure(state, count, policy);
    }
    if prediction.confidence >= policy.auto_confirm_threshold {
        return run_task(state, prediction.category, utterance, policy);
    }
    let mut next = state.enter(Phase::AwaitingConfirmation, count);
    next.pending_intent = Some(PendingQuestion {
        prediction: prediction.clone(),
        utterance: utterance.to_string(),
    });
    let action = DialogueAction::new(
        ActionKind::AskConfirmation,
        policy.templates.confirmation(prediction.category),
    );
    (next, action)
}

fn count_failure(
    state: &DialogueState,
    count: u8,
    policy: &DialoguePolicy,
) -> (DialogueState, DialogueAction) {
    let count = (count + 1).min(MAX_REPROMPTS);
    if count >= MAX_REPROMPTS {
        (
            state.enter(Phase::Fallback, count),
            DialogueAction::new(ActionKind::SuggestMentor, &policy.templates.suggest_mentor),
        )
    } else {
        (
            state.enter(Phase::Reprompting, count),
            DialogueAction::new(ActionKind::AskRephrase, policy.templates.rephrase()),
        )
    }
}

fn run_task(
    state: &DialogueState,
    category: IntentCategory,
    utterance: &str,
    policy: &DialoguePolicy,
) -> (DialogueState, DialogueAction) {
    let task = TaskRecord {
        category,
        utterance: utterance.to_string(),
    };
    let mut next = state.enter(Phase::ExecutingTask, 0);
    next.last_task = Some(task.clone());
    let text = policy
        .templates
        .run_task
        .replace("{intent}", category.topic());
    (
        next,
        DialogueAction {
            kind: ActionKind::RunTask,
            text,
            task: Some(task),
        },
    )
}
