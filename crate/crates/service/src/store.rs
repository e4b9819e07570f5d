//! Append-only persistence. Each session has a line-delimited JSON log under
//! `sessions/`; mentor-request snapshots go to `requests.jsonl`; uploads are
//! stored under `attachments/` by content hash. Every append is flushed to
//! disk before it is acknowledged.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pathchat_core::dialogue::DialogueState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{AttachmentRef, ChatMessage, ChatSession, MentorRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    SessionCreated {
        session: ChatSession,
    },
    Message {
        message: ChatMessage,
    },
    StateChanged {
        session_id: String,
        state: DialogueState,
    },
    MembersChanged {
        session: ChatSession,
    },
}

#[derive(Debug)]
pub struct SessionLog {
    file: File,
}

impl SessionLog {
    pub fn append(&mut self, record: &LogRecord) -> io::Result<()> {
        append_line(&mut self.file, record)
    }
}

fn append_line(file: &mut File, record: &impl Serialize) -> io::Result<()> {
    let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()
}

/// A replayed session: its latest record plus every message in log order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedSession {
    pub session: ChatSession,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Default)]
pub struct Replayed {
    pub sessions: Vec<ReplayedSession>,
    /// Latest snapshot of every request.
    pub requests: Vec<MentorRequest>,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    requests: Mutex<File>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("attachments"))?;
        let requests_path = root.join("requests.jsonl");
        repair_tail(&requests_path)?;
        let requests = OpenOptions::new()
            .create(true)
            .append(true)
            .open(requests_path)?;
        Ok(Self {
            root,
            requests: Mutex::new(requests),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_path(&self, session_id: &str) -> PathBuf {
        self.root
            .join("sessions")
            .join(format!("{session_id}.jsonl"))
    }

    pub fn session_log(&self, session_id: &str) -> io::Result<SessionLog> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.session_path(session_id))?;
        Ok(SessionLog { file })
    }

    pub fn append_request(&self, request: &MentorRequest) -> io::Result<()> {
        let mut file = self.requests.lock().unwrap_or_else(|e| e.into_inner());
        append_line(&mut file, request)
    }

    /// Reads every log. A torn final line (a crash mid-write) is cut off;
    /// damage anywhere else is an error.
    pub fn replay(&self) -> io::Result<Replayed> {
        let mut replayed = Replayed::default();
        let mut entries: Vec<PathBuf> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            repair_tail(&path)?;
            let mut session: Option<ChatSession> = None;
            let mut messages = Vec::new();
            for record in read_records::<LogRecord>(&path)? {
                match record {
                    LogRecord::SessionCreated { session: s }
                    | LogRecord::MembersChanged { session: s } => session = Some(s),
                    LogRecord::Message { message } => messages.push(message),
                    LogRecord::StateChanged { state, .. } => {
                        let s = session
                            .as_mut()
                            .ok_or_else(|| corrupt(&path, "state before session"))?;
                        s.dialogue_state = state;
                    }
                }
            }
            match session {
                Some(session) => replayed
                    .sessions
                    .push(ReplayedSession { session, messages }),
                None if messages.is_empty() => {}
                None => return Err(corrupt(&path, "messages without a session record")),
            }
        }
        let mut requests = BTreeMap::new();
        for r in read_records::<MentorRequest>(&self.root.join("requests.jsonl"))? {
            requests.insert(r.request_id.clone(), r);
        }
        replayed.requests = requests.into_values().collect();
        Ok(replayed)
    }

    /// Stores `bytes` under their SHA-256; storing identical bytes twice is a no-op.
    pub fn put_attachment(
        &self,
        bytes: &[u8],
        media_type: &str,
        filename: &str,
    ) -> io::Result<AttachmentRef> {
        let sha256: String = Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let reference = AttachmentRef {
            sha256: sha256.clone(),
            media_type: media_type.to_string(),
            filename: filename.to_string(),
            size: bytes.len() as u64,
        };
        let dir = self.root.join("attachments");
        let data = dir.join(&sha256);
        if !data.exists() {
            let tmp = dir.join(format!("{sha256}.tmp"));
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &data)?;
        }
        let meta = dir.join(format!("{sha256}.json"));
        if !meta.exists() {
            fs::write(
                &meta,
                serde_json::to_vec(&reference).map_err(io::Error::other)?,
            )?;
        }
        Ok(reference)
    }

    pub fn attachment_ref(&self, sha256: &str) -> io::Result<Option<AttachmentRef>> {
        if !is_sha256_hex(sha256) {
            return Ok(None);
        }
        match fs::read(self.root.join("attachments").join(format!("{sha256}.json"))) {
            Ok(bytes) => Ok(Some(
                serde_json::from_slice(&bytes).map_err(io::Error::other)?,
            )),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn attachment_bytes(&self, sha256: &str) -> io::Result<Vec<u8>> {
        if !is_sha256_hex(sha256) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "not a sha256 digest",
            ));
        }
        fs::read(self.root.join("attachments").join(sha256))
    }
}

pub fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64
        && s.bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn corrupt(path: &Path, what: &str) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("{}: {what}", path.display()),
    )
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| corrupt(path, &format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Truncates anything after the last newline.
fn repair_tail(path: &Path) -> io::Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        tracing::warn!(
            "{}: dropping {} bytes of a torn final record",
            path.display(),
            bytes.len() - keep
        );
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    Ok(())
}
