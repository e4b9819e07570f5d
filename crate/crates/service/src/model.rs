//! Chat-level records: participants, sessions, messages, mentor requests.

use std::collections::BTreeMap;

use pathchat_core::config::Role;
use pathchat_core::dialogue::DialogueState;
use serde::{Deserialize, Serialize};

/// Participant id of the bot in every session.
pub const BOT_ID: &str = "bot";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub role: Role,
    pub available: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberRole {
    Student,
    Mentor,
    Bot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Solo,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub members: BTreeMap<String, MemberRole>,
    pub kind: SessionKind,
    pub created_at: u64,
    pub dialogue_state: DialogueState,
    /// For group sessions, the solo session the mentor request came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_session: Option<String>,
}

impl ChatSession {
    pub fn is_member(&self, participant: &str) -> bool {
        self.members.contains_key(participant)
    }

    pub fn student(&self) -> Option<&str> {
        self.members
            .iter()
            .find(|(_, r)| **r == MemberRole::Student)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, role: MemberRole) -> usize {
        self.members.values().filter(|r| **r == role).count()
    }

    /// Membership invariant for the session kind; peer groups allow extra
    /// students in group sessions.
    pub fn check(&self, allow_peer_groups: bool) -> Result<(), String> {
        let (students, mentors, bots) = (
            self.count(MemberRole::Student),
            self.count(MemberRole::Mentor),
            self.count(MemberRole::Bot),
        );
        let ok = match self.kind {
            SessionKind::Solo => students == 1 && mentors == 0 && bots == 1,
            SessionKind::Group if allow_peer_groups => students >= 1 && mentors == 1 && bots == 1,
            SessionKind::Group => students == 1 && mentors == 1 && bots == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "{:?} session with {students} students, {mentors} mentors, {bots} bots",
                self.kind
            ))
        }
    }
}

/// Reference to an uploaded file, addressed by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentRef {
    pub sha256: String,
    pub media_type: String,
    pub filename: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub session_id: String,
    pub message_id: u64,
    pub sender: String,
    pub text: String,
    #[serde(default)]
    pub attachments: Vec<AttachmentRef>,
    pub mentions_bot: bool,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Accepted,
    Expired,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentorRequest {
    pub request_id: String,
    pub session_id: String,
    pub student: String,
    pub status: RequestStatus,
    pub accepted_by: Option<String>,
    pub created_at: u64,
    pub expires_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_session: Option<String>,
}

impl MentorRequest {
    pub fn check(&self) -> Result<(), String> {
        if self.accepted_by.is_some() != (self.status == RequestStatus::Accepted) {
            return Err(format!(
                "request {} has status {:?} and accepted_by {:?}",
                self.request_id, self.status, self.accepted_by
            ));
        }
        Ok(())
    }
}
