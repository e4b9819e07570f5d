//! WebSocket documents. Every frame is one UTF-8 JSON object whose `type`
//! field selects the variant.

use pathchat_core::config::Role;
use pathchat_core::dialogue::{ActionKind, Phase};
use serde::{Deserialize, Serialize};

use crate::model::{ChatMessage, ChatSession, MentorRequest};

/// Explicit answer to a confirmation question, sent by UI buttons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Confirm,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientDoc {
    /// Must be the first document on a connection.
    Hello {
        participant_id: String,
    },
    Post {
        session_id: String,
        #[serde(default)]
        text: String,
        #[serde(default)]
        attachments: Vec<String>,
        #[serde(default)]
        reply: Option<Reply>,
    },
    MentorRequest {
        session_id: String,
    },
    MentorAccept {
        request_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerDoc {
    Hello {
        participant_id: String,
        role: Role,
        sessions: Vec<String>,
    },
    Message {
        message: ChatMessage,
    },
    /// Status of a request the recipient raised or accepted.
    MentorRequest {
        request: MentorRequest,
    },
    /// Broadcast to available mentors when a request opens.
    MentorNotify {
        request: MentorRequest,
    },
    SessionCreated {
        session: ChatSession,
    },
    StateChanged {
        session_id: String,
        phase: Phase,
        reprompt_count: u8,
        last_action: Option<ActionKind>,
    },
    Error {
        code: String,
        message: String,
    },
}
