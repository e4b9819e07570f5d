//! Offline replay of scripted dialogues against the bot.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bot::ExplainerBot;
use crate::dialogue::{ActionKind, DialogueEvent, DialogueState};

pub const SCRIPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("{0}")]
    Parse(String),
    #[error("step {step}: {reason}")]
    InvalidStep { step: usize, reason: String },
    #[error("script has no steps")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Student,
    Mentor,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    UserMessage,
    UserConfirms,
    UserRejects,
    TaskCompleted,
    TaskFailed,
    MentorRequestedByUser,
    MentorAccepted,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub actor: Actor,
    pub event: EventKind,
    #[serde(default)]
    pub text: String,
}

impl ScriptStep {
    fn to_event(&self) -> DialogueEvent {
        match self.event {
            EventKind::UserMessage => DialogueEvent::UserMessage(self.text.clone()),
            EventKind::UserConfirms => DialogueEvent::UserConfirms,
            EventKind::UserRejects => DialogueEvent::UserRejects,
            EventKind::TaskCompleted => DialogueEvent::TaskCompleted(self.text.clone()),
            EventKind::TaskFailed => DialogueEvent::TaskFailed(self.text.clone()),
            EventKind::MentorRequestedByUser => DialogueEvent::MentorRequestedByUser,
            EventKind::MentorAccepted => DialogueEvent::MentorAccepted {
                mentor: self.text.clone(),
            },
            EventKind::SessionClosed => DialogueEvent::SessionClosed,
        }
    }

    fn actor_allowed(&self) -> bool {
        use EventKind::*;
        match self.actor {
            Actor::Student => {
                matches!(
                    self.event,
                    UserMessage
                        | UserConfirms
                        | UserRejects
                        | MentorRequestedByUser
                        | SessionClosed
                )
            }
            Actor::Mentor => matches!(self.event, MentorAccepted),
            Actor::System => matches!(self.event, TaskCompleted | TaskFailed | SessionClosed),
        }
    }
}

/// A scripted conversation. `expected` lists every action kind the bot
/// should emit, across all steps, in order; empty means "just print".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedDialogue {
    pub steps: Vec<ScriptStep>,
    #[serde(default)]
    pub expected: Vec<ActionKind>,
}

#[derive(Deserialize)]
struct ScriptDocument {
    format_version: u32,
    #[serde(flatten)]
    script: ScriptedDialogue,
}

impl ScriptedDialogue {
    pub fn from_json(document: &str) -> Result<Self, ScriptError> {
        let doc: ScriptDocument =
            serde_json::from_str(document).map_err(|e| ScriptError::Parse(e.to_string()))?;
        if doc.format_version != SCRIPT_FORMAT_VERSION {
            return Err(ScriptError::Parse(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        doc.script.validate()?;
        Ok(doc.script)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| ScriptError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.steps.is_empty() {
            return Err(ScriptError::Empty);
        }
        for (i, step) in self.steps.iter().enumerate() {
            if !step.actor_allowed() {
                return Err(ScriptError::InvalidStep {
                    step: i + 1,
                    reason: format!("{:?} cannot send {:?}", step.actor, step.event),
                });
            }
            if step.event == EventKind::UserMessage && step.text.trim().is_empty() {
                return Err(ScriptError::InvalidStep {
                    step: i + 1,
                    reason: "empty message".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub transcript: Vec<String>,
    pub actual: Vec<ActionKind>,
    pub expected: Vec<ActionKind>,
    pub errors: Vec<String>,
    pub final_state: DialogueState,
    pub max_turn_ms: f64,
}

impl SimulationReport {
    pub fn passed(&self) -> bool {
        self.expected.is_empty() || (self.errors.is_empty() && self.actual == self.expected)
    }

    /// Side-by-side listing of expected and actual kinds; empty when they agree.
    pub fn diff(&self) -> String {
        if self.expected.is_empty() || self.actual == self.expected {
            return String::new();
        }
        let mut out = String::from("    expected             actual\n");
        for i in 0..self.expected.len().max(self.actual.len()) {
            let e = self
                .expected
                .get(i)
                .map_or("-".to_string(), ToString::to_string);
            let a = self
                .actual
                .get(i)
                .map_or("-".to_string(), ToString::to_string);
            let mark = if e == a { ' ' } else { '!' };
            writeln!(out, "{mark} {:>2} {e:<20} {a}", i + 1).unwrap();
        }
        out
    }
}

/// Replays `script` from the idle state. Invalid events are recorded as
/// errors and leave the state unchanged.
pub fn simulate(bot: &ExplainerBot, script: &ScriptedDialogue) -> SimulationReport {
    let mut state = DialogueState::idle();
    let mut transcript = Vec::new();
    let mut actual = Vec::new();
    let mut errors = Vec::new();
    let mut max_turn_ms: f64 = 0.0;
    for (i, step) in script.steps.iter().enumerate() {
        let event = step.to_event();
        let label = match step.text.as_str() {
            "" => format!("{:?}", step.event),
            text => format!("{:?}: {text}", step.event),
        };
        transcript.push(format!("[{}] {:?} {label}", i + 1, step.actor));
        match bot.handle_event(&state, event, &[]) {
            Ok(turn) => {
                max_turn_ms = max_turn_ms.max(turn.elapsed.as_secs_f64() * 1000.0);
                if let Some(p) = &turn.prediction {
                    transcript.push(format!(
                        "    intent {} (confidence {:.2})",
                        p.category, p.confidence
                    ));
                }
                for action in &turn.actions {
                    actual.push(action.kind);
                    if action.text.is_empty() {
                        transcript.push(format!("    bot {}", action.kind));
                    } else {
                        transcript.push(format!(
                            "    bot {}: {}",
                            action.kind,
                            action.text.replace('\n', " ")
                        ));
                    }
                }
                transcript.push(format!(
                    "    -> {} (reprompts {})",
                    turn.state.phase, turn.state.reprompt_count
                ));
                state = turn.state;
            }
            Err(e) => {
                transcript.push(format!("    error: {e}"));
                errors.push(format!("step {}: {e}", i + 1));
            }
        }
    }
    SimulationReport {
        transcript,
        actual,
        expected: script.expected.clone(),
        errors,
        final_state: state,
        max_turn_ms,
    }
}
