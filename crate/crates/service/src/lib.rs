//! Chat service for the learning-path explanation bot: solo and group
//! sessions, mentor escalation, append-only persistence, and the HTTP and
//! WebSocket protocol used by the web client.

pub mod commands;
pub mod http;
pub mod model;
pub mod protocol;
pub mod service;
pub mod store;

pub use model::{ChatMessage, ChatSession, MentorRequest, BOT_ID};
pub use service::{ChatService, ServiceError, ServiceSettings};
