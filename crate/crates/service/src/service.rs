//! Session manager: solo and group sessions, message fan-out, bot triggers
//! and mentor requests.
//!
//! Each session sits behind its own async mutex, so messages within a
//! session are handled one at a time in arrival order while different
//! sessions proceed independently. Mentor-request state changes happen
//! under one short-lived lock, which makes acceptance a compare-and-set.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use pathchat_core::bot::{BotError, ExplainerBot, Turn};
use pathchat_core::config::{Config, ParticipantConfig, Role};
use pathchat_core::context::HistoryLine;
use pathchat_core::dialogue::{
    transition, ActionKind, DialogueAction, DialogueError, DialogueEvent, DialogueState, Phase,
};
use pathchat_core::llm::{Attachment, AttachmentKind};
use pathchat_core::text::contains_word_token;
use tokio::sync::{broadcast, Mutex as AsyncMutex};

use crate::model::{
    AttachmentRef, ChatMessage, ChatSession, MemberRole, MentorRequest, Participant, RequestStatus,
    SessionKind, BOT_ID,
};
use crate::protocol::{Reply, ServerDoc};
use crate::store::{LogRecord, SessionLog, Store};

const OUTBOX_CAPACITY: usize = 1024;
const EXPIRED_TEXT: &str = "No mentor accepted your request in time. You can ask another question or request a mentor again.";
const CANCELLED_TEXT: &str = "Your mentoring request was cancelled.";
const BOT_FAILURE_TEXT: &str =
    "I could not answer that right now. Please try again or ask your mentor.";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("participant {participant} is not a {expected:?}")]
    WrongRole { participant: String, expected: Role },
    #[error("no session {0}")]
    NoSession(String),
    #[error("{participant} is not a member of session {session}")]
    NotMember {
        participant: String,
        session: String,
    },
    #[error("session {0} already has a pending mentor request")]
    DuplicatePendingRequest(String),
    #[error("no mentor request {0}")]
    UnknownRequest(String),
    #[error("request {0} was already accepted")]
    AlreadyAccepted(String),
    #[error("request {request} is {status:?}")]
    RequestNotPending {
        request: String,
        status: RequestStatus,
    },
    #[error("unknown attachment {0}")]
    UnknownAttachment(String),
    #[error("attachment {sha256} is {size} bytes, above the {cap}-byte cap")]
    AttachmentTooLarge {
        sha256: String,
        size: u64,
        cap: usize,
    },
    #[error("message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error("peer groups are disabled")]
    PeerGroupsDisabled,
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("bot failure: {0}")]
    Bot(String),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable code for wire errors.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownParticipant(_) => "unknown_participant",
            ServiceError::WrongRole { .. } => "wrong_role",
            ServiceError::NoSession(_) => "no_session",
            ServiceError::NotMember { .. } => "not_member",
            ServiceError::DuplicatePendingRequest(_) => "duplicate_pending_request",
            ServiceError::UnknownRequest(_) => "unknown_request",
            ServiceError::AlreadyAccepted(_) => "already_accepted",
            ServiceError::RequestNotPending { .. } => "request_not_pending",
            ServiceError::UnknownAttachment(_) => "unknown_attachment",
            ServiceError::AttachmentTooLarge { .. } => "attachment_too_large",
            ServiceError::EmptyMessage => "empty_message",
            ServiceError::Dialogue(_) => "invalid_event",
            ServiceError::PeerGroupsDisabled => "peer_groups_disabled",
            ServiceError::InvalidSession(_) => "invalid_session",
            ServiceError::Bot(_) => "bot_failure",
            ServiceError::Storage(_) => "storage",
        }
    }
}

impl From<BotError> for ServiceError {
    fn from(e: BotError) -> Self {
        match e {
            BotError::Dialogue(d) => ServiceError::Dialogue(d),
            other => ServiceError::Bot(other.to_string()),
        }
    }
}

pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSettings {
    pub bot_mention: String,
    pub mentor_request_ttl_ms: u64,
    pub attachment_cap: usize,
    pub allow_peer_groups: bool,
    pub history_window: usize,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self::from(&Config::default())
    }
}

impl From<&Config> for ServiceSettings {
    fn from(c: &Config) -> Self {
        Self {
            bot_mention: c.bot_mention.clone(),
            mentor_request_ttl_ms: c.mentor_request_ttl_secs * 1000,
            attachment_cap: c.attachment_cap_bytes,
            allow_peer_groups: c.allow_peer_groups,
            history_window: c.history_window,
        }
    }
}

#[derive(Debug)]
struct SessionEntry {
    session: ChatSession,
    messages: Vec<ChatMessage>,
    log: SessionLog,
}

impl SessionEntry {
    fn next_message_id(&self) -> u64 {
        self.messages.last().map_or(1, |m| m.message_id + 1)
    }
}

/// A delivered message plus any bot messages it triggered.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PostOutcome {
    pub message: ChatMessage,
    pub bot_messages: Vec<ChatMessage>,
    /// Dialogue actions the message triggered. A group @-mention counts as
    /// `RunTask` then `BotReply`; other group messages trigger none.
    pub actions: Vec<ActionKind>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RequestOutcome {
    pub request: MentorRequest,
    /// How many available mentors were notified.
    pub notified: usize,
}

pub struct ChatService {
    bot: Arc<ExplainerBot>,
    settings: ServiceSettings,
    clock: Arc<dyn Clock>,
    store: Store,
    participants: RwLock<BTreeMap<String, Participant>>,
    sessions: RwLock<HashMap<String, Arc<AsyncMutex<SessionEntry>>>>,
    requests: Mutex<BTreeMap<String, MentorRequest>>,
    outboxes: Mutex<HashMap<String, broadcast::Sender<ServerDoc>>>,
    next_session: AtomicU64,
    next_request: AtomicU64,
}

impl fmt::Debug for ChatService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatService")
            .field("settings", &self.settings)
            .field("data_dir", &self.store.root())
            .finish_non_exhaustive()
    }
}

fn numeric_suffix(id: &str) -> u64 {
    id.trim_start_matches(|c: char| c.is_ascii_alphabetic())
        .parse()
        .unwrap_or(0)
}

impl ChatService {
    /// Opens the store under `data_dir` and replays every log found there.
    pub fn open(
        bot: Arc<ExplainerBot>,
        settings: ServiceSettings,
        participants: &[ParticipantConfig],
        data_dir: impl Into<std::path::PathBuf>,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Self>, ServiceError> {
        let store = Store::open(data_dir)?;
        let replayed = store.replay()?;
        let mut sessions = HashMap::new();
        let mut max_session = 0;
        for r in replayed.sessions {
            max_session = max_session.max(numeric_suffix(&r.session.session_id));
            let log = store.session_log(&r.session.session_id)?;
            let id = r.session.session_id.clone();
            sessions.insert(
                id,
                Arc::new(AsyncMutex::new(SessionEntry {
                    session: r.session,
                    messages: r.messages,
                    log,
                })),
            );
        }
        let max_request = replayed
            .requests
            .iter()
            .map(|r| numeric_suffix(&r.request_id))
            .max()
            .unwrap_or(0);
        let requests = replayed
            .requests
            .into_iter()
            .map(|r| (r.request_id.clone(), r))
            .collect();
        let participants = participants
            .iter()
            .map(|p| {
                (
                    p.id.clone(),
                    Participant {
                        id: p.id.clone(),
                        role: p.role,
                        available: p.available,
                    },
                )
            })
            .collect();
        tracing::info!(sessions = sessions.len(), "replayed session logs");
        Ok(Arc::new(Self {
            bot,
            settings,
            clock,
            store,
            participants: RwLock::new(participants),
            sessions: RwLock::new(sessions),
            requests: Mutex::new(requests),
            outboxes: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(max_session + 1),
            next_request: AtomicU64::new(max_request + 1),
        }))
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn bot(&self) -> &Arc<ExplainerBot> {
        &self.bot
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn participant(&self, id: &str) -> Result<Participant, ServiceError> {
        self.participants
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownParticipant(id.to_string()))
    }

    fn require_role(&self, id: &str, role: Role) -> Result<Participant, ServiceError> {
        let p = self.participant(id)?;
        if p.role != role {
            return Err(ServiceError::WrongRole {
                participant: id.to_string(),
                expected: role,
            });
        }
        Ok(p)
    }

    /// Registers or replaces a participant at runtime.
    pub fn register(&self, participant: Participant) {
        self.participants
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(participant.id.clone(), participant);
    }

    pub fn set_availability(
        &self,
        mentor: &str,
        available: bool,
    ) -> Result<Participant, ServiceError> {
        self.require_role(mentor, Role::Mentor)?;
        let mut guard = self.participants.write().unwrap_or_else(|e| e.into_inner());
        let p = guard.get_mut(mentor).expect("checked above");
        p.available = available;
        Ok(p.clone())
    }

    /// Live feed for one participant. Documents sent before subscribing are
    /// not replayed; clients resync through [`ChatService::history`].
    pub fn subscribe(&self, participant: &str) -> broadcast::Receiver<ServerDoc> {
        let mut outboxes = self.outboxes.lock().unwrap_or_else(|e| e.into_inner());
        outboxes
            .entry(participant.to_string())
            .or_insert_with(|| broadcast::channel(OUTBOX_CAPACITY).0)
            .subscribe()
    }

    fn deliver(&self, to: &str, doc: ServerDoc) {
        if to == BOT_ID {
            return;
        }
        let outboxes = self.outboxes.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(tx) = outboxes.get(to) {
            let _ = tx.send(doc);
        }
    }

    fn deliver_to_members(&self, session: &ChatSession, doc: &ServerDoc) {
        for member in session.members.keys() {
            self.deliver(member, doc.clone());
        }
    }

    fn entry(&self, session_id: &str) -> Result<Arc<AsyncMutex<SessionEntry>>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NoSession(session_id.to_string()))
    }

    pub async fn session(&self, session_id: &str) -> Result<ChatSession, ServiceError> {
        Ok(self.entry(session_id)?.lock().await.session.clone())
    }

    /// Ids of every session `participant` belongs to, in ascending order.
    pub async fn sessions_of(&self, participant: &str) -> Vec<String> {
        let entries: Vec<_> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        let mut ids = Vec::new();
        for entry in entries {
            let e = entry.lock().await;
            if e.session.is_member(participant) {
                ids.push(e.session.session_id.clone());
            }
        }
        ids.sort();
        ids
    }

    pub fn session_count(&self) -> usize {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    fn insert_session(&self, session: ChatSession) -> Result<(), ServiceError> {
        session
            .check(self.settings.allow_peer_groups)
            .map_err(ServiceError::InvalidSession)?;
        let mut log = self.store.session_log(&session.session_id)?;
        log.append(&LogRecord::SessionCreated {
            session: session.clone(),
        })?;
        let id = session.session_id.clone();
        let entry = SessionEntry {
            session,
            messages: Vec::new(),
            log,
        };
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(AsyncMutex::new(entry)));
        Ok(())
    }

    fn new_session_id(&self) -> String {
        format!("s{:06}", self.next_session.fetch_add(1, Ordering::SeqCst))
    }

    /// Opens a solo session between `student` and the bot.
    pub async fn create_session(&self, student: &str) -> Result<ChatSession, ServiceError> {
        self.require_role(student, Role::Student)?;
        let session = ChatSession {
            session_id: self.new_session_id(),
            members: [
                (student.to_string(), MemberRole::Student),
                (BOT_ID.to_string(), MemberRole::Bot),
            ]
            .into(),
            kind: SessionKind::Solo,
            created_at: self.clock.now_ms(),
            dialogue_state: DialogueState::idle(),
            origin_session: None,
        };
        self.insert_session(session.clone())?;
        self.deliver(
            student,
            ServerDoc::SessionCreated {
                session: session.clone(),
            },
        );
        Ok(session)
    }

    fn append_message(
        &self,
        entry: &mut SessionEntry,
        sender: &str,
        text: String,
        attachments: Vec<AttachmentRef>,
    ) -> Result<ChatMessage, ServiceError> {
        let message = ChatMessage {
            session_id: entry.session.session_id.clone(),
            message_id: entry.next_message_id(),
            sender: sender.to_string(),
            mentions_bot: contains_word_token(&text, &self.settings.bot_mention),
            text,
            attachments,
            timestamp: self.clock.now_ms(),
        };
        entry.log.append(&LogRecord::Message {
            message: message.clone(),
        })?;
        entry.messages.push(message.clone());
        self.deliver_to_members(
            &entry.session,
            &ServerDoc::Message {
                message: message.clone(),
            },
        );
        Ok(message)
    }

    fn set_state(
        &self,
        entry: &mut SessionEntry,
        state: DialogueState,
        last_action: Option<ActionKind>,
    ) -> Result<(), ServiceError> {
        entry.log.append(&LogRecord::StateChanged {
            session_id: entry.session.session_id.clone(),
            state: state.clone(),
        })?;
        let doc = ServerDoc::StateChanged {
            session_id: entry.session.session_id.clone(),
            phase: state.phase,
            reprompt_count: state.reprompt_count,
            last_action,
        };
        entry.session.dialogue_state = state;
        self.deliver_to_members(&entry.session, &doc);
        Ok(())
    }

    fn bot_says(
        &self,
        entry: &mut SessionEntry,
        actions: &[DialogueAction],
    ) -> Result<Vec<ChatMessage>, ServiceError> {
        actions
            .iter()
            .filter(|a| {
                !matches!(a.kind, ActionKind::RunTask | ActionKind::NoOp) && !a.text.is_empty()
            })
            .map(|a| self.append_message(entry, BOT_ID, a.text.clone(), Vec::new()))
            .collect()
    }

    /// Opens a mentor request from `requester`, a student member of the session.
    pub async fn request_mentor(
        &self,
        session_id: &str,
        requester: &str,
    ) -> Result<RequestOutcome, ServiceError> {
        self.sweep_expired().await?;
        let entry = self.entry(session_id)?;
        let mut e = entry.lock().await;
        if e.session.members.get(requester) != Some(&MemberRole::Student) {
            return Err(ServiceError::NotMember {
                participant: requester.to_string(),
                session: session_id.to_string(),
            });
        }
        self.ensure_no_pending(session_id)?;
        if e.session.kind == SessionKind::Solo {
            let (state, action) = transition(
                &e.session.dialogue_state,
                &DialogueEvent::MentorRequestedByUser,
                None,
                self.bot.policy(),
            )?;
            self.set_state(&mut e, state, Some(action.kind))?;
            self.bot_says(&mut e, std::slice::from_ref(&action))?;
        }
        self.open_request(&e.session, requester)
    }

    fn ensure_no_pending(&self, session_id: &str) -> Result<(), ServiceError> {
        let requests = self.requests.lock().unwrap_or_else(|e| e.into_inner());
        if requests
            .values()
            .any(|r| r.session_id == session_id && r.status == RequestStatus::Pending)
        {
            return Err(ServiceError::DuplicatePendingRequest(
                session_id.to_string(),
            ));
        }
        Ok(())
    }

    fn open_request(
        &self,
        session: &ChatSession,
        student: &str,
    ) -> Result<RequestOutcome, ServiceError> {
        let now = self.clock.now_ms();
        let request = {
            let mut requests = self.requests.lock().unwrap_or_else(|e| e.into_inner());
            if requests
                .values()
                .any(|r| r.session_id == session.session_id && r.status == RequestStatus::Pending)
            {
                return Err(ServiceError::DuplicatePendingRequest(
                    session.session_id.clone(),
                ));
            }
            let request = MentorRequest {
                request_id: format!("r{:06}", self.next_request.fetch_add(1, Ordering::SeqCst)),
                session_id: session.session_id.clone(),
                student: student.to_string(),
                status: RequestStatus::Pending,
                accepted_by: None,
                created_at: now,
                expires_at: now + self.settings.mentor_request_ttl_ms,
                group_session: None,
            };
            self.store.append_request(&request)?;
            requests.insert(request.request_id.clone(), request.clone());
            request
        };
        let mentors: Vec<String> = self
            .participants
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .filter(|p| p.role == Role::Mentor && p.available)
            .map(|p| p.id.clone())
            .collect();
        for m in &mentors {
            self.deliver(
                m,
                ServerDoc::MentorNotify {
                    request: request.clone(),
                },
            );
        }
        self.deliver(
            student,
            ServerDoc::MentorRequest {
                request: request.clone(),
            },
        );
        tracing::info!(request = %request.request_id, notified = mentors.len(), "mentor request opened");
        Ok(RequestOutcome {
            request,
            notified: mentors.len(),
        })
    }

    pub fn request(&self, request_id: &str) -> Result<MentorRequest, ServiceError> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(request_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownRequest(request_id.to_string()))
    }

    pub fn requests(&self) -> Vec<MentorRequest> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect()
    }

    /// Accepts a pending request. The first acceptor wins; the group session
    /// holds the student, the accepting mentor and the bot.
    pub async fn accept_request(
        &self,
        request_id: &str,
        mentor: &str,
    ) -> Result<ChatSession, ServiceError> {
        self.require_role(mentor, Role::Mentor)?;
        let now = self.clock.now_ms();
        let group_id = {
            let mut requests = self.requests.lock().unwrap_or_else(|e| e.into_inner());
            let r = requests
                .get_mut(request_id)
                .ok_or_else(|| ServiceError::UnknownRequest(request_id.to_string()))?;
            match r.status {
                RequestStatus::Pending if now >= r.expires_at => {
                    r.status = RequestStatus::Expired;
                    self.store.append_request(r)?;
                    return Err(ServiceError::RequestNotPending {
                        request: request_id.into(),
                        status: r.status,
                    });
                }
                RequestStatus::Pending => {}
                RequestStatus::Accepted => {
                    return Err(ServiceError::AlreadyAccepted(request_id.into()))
                }
                status => {
                    return Err(ServiceError::RequestNotPending {
                        request: request_id.into(),
                        status,
                    })
                }
            }
            let group_id = self.new_session_id();
            let mut updated = r.clone();
            updated.status = RequestStatus::Accepted;
            updated.accepted_by = Some(mentor.to_string());
            updated.group_session = Some(group_id.clone());
            self.store.append_request(&updated)?;
            *r = updated;
            group_id
        };
        let request = self.request(request_id)?;

        let group = ChatSession {
            session_id: group_id,
            members: [
                (request.student.clone(), MemberRole::Student),
                (mentor.to_string(), MemberRole::Mentor),
                (BOT_ID.to_string(), MemberRole::Bot),
            ]
            .into(),
            kind: SessionKind::Group,
            created_at: now,
            dialogue_state: DialogueState {
                phase: Phase::GroupActive,
                ..DialogueState::idle()
            },
            origin_session: Some(request.session_id.clone()),
        };
        self.insert_session(group.clone())?;
        self.deliver_to_members(
            &group,
            &ServerDoc::SessionCreated {
                session: group.clone(),
            },
        );
        self.deliver(
            &request.student,
            ServerDoc::MentorRequest {
                request: request.clone(),
            },
        );

        // The solo dialogue is suspended while the group is active.
        let origin = self.entry(&request.session_id)?;
        let mut o = origin.lock().await;
        if o.session.dialogue_state.phase == Phase::MentorRequested {
            let event = DialogueEvent::MentorAccepted {
                mentor: mentor.to_string(),
            };
            let (state, action) =
                transition(&o.session.dialogue_state, &event, None, self.bot.policy())?;
            self.set_state(&mut o, state, Some(action.kind))?;
            drop(o);
            let group_entry = self.entry(&group.session_id)?;
            let mut g = group_entry.lock().await;
            self.bot_says(&mut g, std::slice::from_ref(&action))?;
        }
        tracing::info!(request = request_id, mentor, group = %group.session_id, "mentor request accepted");
        Ok(group)
    }

    /// Cancels a pending request; only the requesting student may do so.
    pub async fn cancel_request(
        &self,
        request_id: &str,
        by: &str,
    ) -> Result<MentorRequest, ServiceError> {
        let request = {
            let mut requests = self.requests.lock().unwrap_or_else(|e| e.into_inner());
            let r = requests
                .get_mut(request_id)
                .ok_or_else(|| ServiceError::UnknownRequest(request_id.to_string()))?;
            if r.student != by {
                return Err(ServiceError::NotMember {
                    participant: by.into(),
                    session: r.session_id.clone(),
                });
            }
            if r.status != RequestStatus::Pending {
                return Err(ServiceError::RequestNotPending {
                    request: request_id.into(),
                    status: r.status,
                });
            }
            r.status = RequestStatus::Cancelled;
            self.store.append_request(r)?;
            r.clone()
        };
        self.release_origin(&request, CANCELLED_TEXT).await?;
        self.deliver(
            &request.student,
            ServerDoc::MentorRequest {
                request: request.clone(),
            },
        );
        Ok(request)
    }

    /// Marks overdue pending requests expired and returns them.
    pub async fn sweep_expired(&self) -> Result<Vec<MentorRequest>, ServiceError> {
        let now = self.clock.now_ms();
        let expired: Vec<MentorRequest> = {
            let mut requests = self.requests.lock().unwrap_or_else(|e| e.into_inner());
            let mut out = Vec::new();
            for r in requests
                .values_mut()
                .filter(|r| r.status == RequestStatus::Pending && now >= r.expires_at)
            {
                r.status = RequestStatus::Expired;
                self.store.append_request(r)?;
                out.push(r.clone());
            }
            out
        };
        for r in &expired {
            self.release_origin(r, EXPIRED_TEXT).await?;
            self.deliver(&r.student, ServerDoc::MentorRequest { request: r.clone() });
        }
        Ok(expired)
    }

    /// Returns a solo session that was waiting on `request` to idle.
    async fn release_origin(
        &self,
        request: &MentorRequest,
        text: &str,
    ) -> Result<(), ServiceError> {
        let entry = self.entry(&request.session_id)?;
        let mut e = entry.lock().await;
        if e.session.kind == SessionKind::Solo
            && e.session.dialogue_state.phase == Phase::MentorRequested
        {
            let (state, action) = transition(
                &e.session.dialogue_state,
                &DialogueEvent::SessionClosed,
                None,
                self.bot.policy(),
            )?;
            self.set_state(&mut e, state, Some(action.kind))?;
            self.append_message(&mut e, BOT_ID, text.to_string(), Vec::new())?;
        }
        Ok(())
    }

    fn resolve_attachments(&self, shas: &[String]) -> Result<Vec<AttachmentRef>, ServiceError> {
        shas.iter()
            .map(|sha| {
                let r = self
                    .store
                    .attachment_ref(sha)?
                    .ok_or_else(|| ServiceError::UnknownAttachment(sha.clone()))?;
                if r.size > self.settings.attachment_cap as u64 {
                    return Err(ServiceError::AttachmentTooLarge {
                        sha256: sha.clone(),
                        size: r.size,
                        cap: self.settings.attachment_cap,
                    });
                }
                Ok(r)
            })
            .collect()
    }

    fn load_for_model(&self, refs: &[AttachmentRef]) -> Result<Vec<Attachment>, ServiceError> {
        let mut out = Vec::new();
        for r in refs {
            let kind = match r.media_type.as_str() {
                "application/pdf" => AttachmentKind::Pdf,
                m if m.starts_with("image/") => AttachmentKind::Image,
                other => {
                    tracing::warn!(media_type = other, "attachment not forwarded to the model");
                    continue;
                }
            };
            out.push(Attachment {
                kind,
                media_type: r.media_type.clone(),
                filename: r.filename.clone(),
                bytes: self.store.attachment_bytes(&r.sha256)?,
            });
        }
        Ok(out)
    }

    /// Appends a message and runs the bot if the message calls for it: every
    /// student message in a solo session, and @-mentions in group sessions.
    pub async fn post_message(
        &self,
        session_id: &str,
        sender: &str,
        text: &str,
        attachments: &[String],
        reply: Option<Reply>,
    ) -> Result<PostOutcome, ServiceError> {
        let entry = self.entry(session_id)?;
        let mut e = entry.lock().await;
        let role = *e
            .session
            .members
            .get(sender)
            .filter(|r| **r != MemberRole::Bot)
            .ok_or_else(|| ServiceError::NotMember {
                participant: sender.to_string(),
                session: session_id.to_string(),
            })?;
        let text = match (text.trim(), reply) {
            ("", Some(Reply::Confirm)) => "Yes".to_string(),
            ("", Some(Reply::Reject)) => "No".to_string(),
            (t, _) => t.to_string(),
        };
        if text.is_empty() && attachments.is_empty() {
            return Err(ServiceError::EmptyMessage);
        }
        let refs = self.resolve_attachments(attachments)?;

        match (e.session.kind, role) {
            (SessionKind::Solo, MemberRole::Student) if !text.is_empty() => {
                let event = match reply {
                    Some(Reply::Confirm) => DialogueEvent::UserConfirms,
                    Some(Reply::Reject) => DialogueEvent::UserRejects,
                    None => self.bot.event_for_message(&e.session.dialogue_state, &text),
                };
                let model_attachments = self.load_for_model(&refs)?;
                let turn = self
                    .run_turn(e.session.dialogue_state.clone(), event, model_attachments)
                    .await?;
                let message = self.append_message(&mut e, sender, text, refs)?;
                let last = turn.actions.last().map(|a| a.kind);
                self.set_state(&mut e, turn.state.clone(), last)?;
                let bot_messages = self.bot_says(&mut e, &turn.actions)?;
                if turn.requests_mentor() {
                    match self.open_request(&e.session, sender) {
                        Ok(_) | Err(ServiceError::DuplicatePendingRequest(_)) => {}
                        Err(err) => return Err(err),
                    }
                }
                Ok(PostOutcome {
                    message,
                    bot_messages,
                    actions: turn.action_kinds(),
                })
            }
            (SessionKind::Group, _) => {
                let message = self.append_message(&mut e, sender, text, refs.clone())?;
                let mut bot_messages = Vec::new();
                let mut actions = Vec::new();
                if message.mentions_bot {
                    let window = self.settings.history_window;
                    let prior = &e.messages[..e.messages.len() - 1];
                    let history: Vec<HistoryLine> = prior[prior.len().saturating_sub(window)..]
                        .iter()
                        .map(|m| HistoryLine {
                            sender: m.sender.clone(),
                            text: m.text.clone(),
                        })
                        .collect();
                    let model_attachments = self.load_for_model(&refs)?;
                    let answer = self
                        .run_mention(message.text.clone(), history, model_attachments)
                        .await;
                    let text = answer.unwrap_or_else(|err| {
                        tracing::warn!(session = session_id, "bot mention failed: {err}");
                        BOT_FAILURE_TEXT.to_string()
                    });
                    bot_messages.push(self.append_message(&mut e, BOT_ID, text, Vec::new())?);
                    actions = vec![ActionKind::RunTask, ActionKind::BotReply];
                }
                Ok(PostOutcome {
                    message,
                    bot_messages,
                    actions,
                })
            }
            _ => Ok(PostOutcome {
                message: self.append_message(&mut e, sender, text, refs)?,
                bot_messages: Vec::new(),
                actions: Vec::new(),
            }),
        }
    }

    async fn run_turn(
        &self,
        state: DialogueState,
        event: DialogueEvent,
        attachments: Vec<Attachment>,
    ) -> Result<Turn, ServiceError> {
        let bot = self.bot.clone();
        tokio::task::spawn_blocking(move || bot.handle_event(&state, event, &attachments))
            .await
            .map_err(|e| ServiceError::Bot(e.to_string()))?
            .map_err(ServiceError::from)
    }

    async fn run_mention(
        &self,
        question: String,
        history: Vec<HistoryLine>,
        attachments: Vec<Attachment>,
    ) -> Result<String, ServiceError> {
        let bot = self.bot.clone();
        let mention = self.settings.bot_mention.clone();
        tokio::task::spawn_blocking(move || {
            bot.answer_mention(&question, &mention, &history, &attachments)
        })
        .await
        .map_err(|e| ServiceError::Bot(e.to_string()))?
        .map(|a| a.text)
        .map_err(|e| ServiceError::Bot(e.to_string()))
    }

    /// Last `limit` messages (all when `None`) in ascending id order.
    pub async fn history(
        &self,
        session_id: &str,
        requester: &str,
        limit: Option<usize>,
    ) -> Result<Vec<ChatMessage>, ServiceError> {
        let entry = self.entry(session_id)?;
        let e = entry.lock().await;
        if !e.session.is_member(requester) {
            return Err(ServiceError::NotMember {
                participant: requester.into(),
                session: session_id.into(),
            });
        }
        let limit = limit.unwrap_or(e.messages.len());
        Ok(e.messages[e.messages.len().saturating_sub(limit)..].to_vec())
    }

    /// Adds another student to a group session. Only possible with peer groups enabled.
    pub async fn add_peer(
        &self,
        session_id: &str,
        by: &str,
        student: &str,
    ) -> Result<ChatSession, ServiceError> {
        if !self.settings.allow_peer_groups {
            return Err(ServiceError::PeerGroupsDisabled);
        }
        self.require_role(student, Role::Student)?;
        let entry = self.entry(session_id)?;
        let mut e = entry.lock().await;
        if e.session.kind != SessionKind::Group
            || e.session.members.get(by) != Some(&MemberRole::Mentor)
        {
            return Err(ServiceError::NotMember {
                participant: by.into(),
                session: session_id.into(),
            });
        }
        let mut session = e.session.clone();
        session
            .members
            .insert(student.to_string(), MemberRole::Student);
        session.check(true).map_err(ServiceError::InvalidSession)?;
        e.log.append(&LogRecord::MembersChanged {
            session: session.clone(),
        })?;
        e.session = session.clone();
        self.deliver_to_members(
            &session,
            &ServerDoc::SessionCreated {
                session: session.clone(),
            },
        );
        Ok(session)
    }
}
