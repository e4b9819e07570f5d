//! Completion gateway over interchangeable language-model backends.
//!
//! [`LlmGateway`] validates requests, bounds concurrency, retries once on
//! transport failures and hard-caps response length. Backends only turn a
//! request into text: [`MockLlm`] does it deterministically without I/O,
//! [`HttpBackend`] speaks the chat-completions wire format.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const DEFAULT_ATTACHMENT_CAP: usize = 10 * 1024 * 1024;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    Image,
    Pdf,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    /// MIME type, e.g. `image/png`.
    pub media_type: String,
    pub filename: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Attachment")
            .field("kind", &self.kind)
            .field("media_type", &self.media_type)
            .field("filename", &self.filename)
            .field("len", &self.bytes.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub attachments: Vec<Attachment>,
    pub max_response_chars: usize,
    pub request_id: String,
}

static NEXT_REQUEST: AtomicU64 = AtomicU64::new(1);

fn next_request_id() -> String {
    format!("req-{}", NEXT_REQUEST.fetch_add(1, Ordering::Relaxed))
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_response_chars: usize) -> Self {
        Self {
            prompt: prompt.into(),
            attachments: Vec::new(),
            max_response_chars,
            request_id: next_request_id(),
        }
    }

    pub fn with_attachments(mut self, attachments: Vec<Attachment>) -> Self {
        self.attachments = attachments;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("max_response_chars must be positive")]
    ZeroResponseCap,
    #[error("attachment {filename:?} is {size} bytes, above the {cap}-byte cap")]
    AttachmentTooLarge {
        filename: String,
        size: usize,
        cap: usize,
    },
    #[error("backend {0} does not accept attachments")]
    UnsupportedAttachment(String),
    #[error("credential environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

/// Something that turns a prompt into completion text.
pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;

    fn supports_attachments(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Counting semaphore for the blocking gateway.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self
                .freed
                .wait(available)
                .unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayLimits {
    pub attachment_cap: usize,
    pub max_in_flight: usize,
}

impl Default for GatewayLimits {
    fn default() -> Self {
        Self {
            attachment_cap: DEFAULT_ATTACHMENT_CAP,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

pub struct LlmGateway {
    backend: Box<dyn CompletionBackend>,
    limits: GatewayLimits,
    permits: Permits,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("backend", &self.backend.id())
            .field("limits", &self.limits)
            .finish()
    }
}

impl LlmGateway {
    pub fn new(backend: impl CompletionBackend + 'static) -> Self {
        Self::with_limits(backend, GatewayLimits::default())
    }

    pub fn with_limits(backend: impl CompletionBackend + 'static, limits: GatewayLimits) -> Self {
        Self {
            backend: Box::new(backend),
            permits: Permits::new(limits.max_in_flight),
            limits,
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn attachment_cap(&self) -> usize {
        self.limits.attachment_cap
    }

    /// Runs one completion. Transport failures are retried once; every other
    /// error is returned as is. The response never exceeds
    /// `max_response_chars` characters.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        if request.max_response_chars == 0 {
            return Err(LlmError::ZeroResponseCap);
        }
        for a in &request.attachments {
            if a.bytes.len() > self.limits.attachment_cap {
                return Err(LlmError::AttachmentTooLarge {
                    filename: a.filename.clone(),
                    size: a.bytes.len(),
                    cap: self.limits.attachment_cap,
                });
            }
        }
        if !request.attachments.is_empty() && !self.backend.supports_attachments() {
            return Err(LlmError::UnsupportedAttachment(
                self.backend.id().to_string(),
            ));
        }

        let _permit = self.permits.acquire();
        let started = Instant::now();
        let text = match self.backend.complete(request) {
            Err(LlmError::Transport(first)) => {
                log::warn!(
                    "{}: transport error, retrying once: {first}",
                    request.request_id
                );
                self.backend.complete(request)?
            }
            other => other?,
        };
        Ok(CompletionResponse {
            text: truncate_at_whitespace(&text, request.max_response_chars),
            backend_id: self.backend.id().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// Cuts `text` to at most `cap` characters, preferring the last whitespace
/// boundary. Text without any whitespace in range is cut hard at `cap`.
pub fn truncate_at_whitespace(text: &str, cap: usize) -> String {
    let Some((cap_byte, cap_char)) = text.char_indices().nth(cap) else {
        return text.to_string();
    };
    // A whitespace char at index `cap` still leaves a complete `cap`-char prefix.
    let cut = text[..cap_byte + cap_char.len_utf8()]
        .rfind(char::is_whitespace)
        .unwrap_or(cap_byte);
    text[..cut].trim_end().to_string()
}

/// Last nonempty line of a prompt: the task instruction.
pub fn task_line(prompt: &str) -> &str {
    prompt
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
}

/// Eight-hex-digit digest used by the mock to tag its echoes.
pub fn digest_tag(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic offline backend. Replies `[mock:<digest>] <task line>` and
/// keeps every prompt it sees so tests can inspect what was sent.
#[derive(Debug, Default)]
pub struct MockLlm {
    captured: Mutex<Vec<String>>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply_for(prompt: &str) -> String {
        let task = task_line(prompt);
        format!("[mock:{}] {task}", digest_tag(task))
    }

    pub fn prompts(&self) -> Vec<String> {
        self.captured
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn last_prompt(&self) -> Option<String> {
        self.captured
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .last()
            .cloned()
    }
}

impl CompletionBackend for MockLlm {
    fn id(&self) -> &str {
        "mock"
    }

    fn supports_attachments(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.captured
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.prompt.clone());
        Ok(Self::reply_for(&request.prompt))
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn supports_attachments(&self) -> bool {
        (**self).supports_attachments()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Replays a fixed queue of outcomes, then repeats `fallback`.
#[derive(Debug)]
pub struct ScriptedLlm {
    queue: Mutex<VecDeque<Result<String, LlmError>>>,
    fallback: String,
    calls: AtomicU64,
}

impl ScriptedLlm {
    pub fn new(outcomes: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        Self {
            queue: Mutex::new(outcomes.into_iter().collect()),
            fallback: String::new(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = text.into();
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedLlm {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self
            .queue
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front();
        next.unwrap_or_else(|| Ok(self.fallback.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: String,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub supports_attachments: bool,
    pub system_prompt: String,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            credential_env: "PATHCHAT_LLM_API_KEY".into(),
            timeout_secs: DEFAULT_TIMEOUT.as_secs(),
            temperature: 0.0,
            supports_attachments: true,
            system_prompt: "You explain learning-path recommendations to students. \
                            Follow the roles, definitions and rules given in the prompt."
                .into(),
        }
    }
}

/// Chat-completions client (system + user message, single text answer).
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let user_content = if request.attachments.is_empty() {
            json!(request.prompt)
        } else {
            let engine = base64::engine::general_purpose::STANDARD;
            let mut parts = vec![json!({"type": "text", "text": request.prompt})];
            for a in &request.attachments {
                let data = format!("data:{};base64,{}", a.media_type, engine.encode(&a.bytes));
                parts.push(match a.kind {
                    AttachmentKind::Image => {
                        json!({"type": "image_url", "image_url": {"url": data}})
                    }
                    AttachmentKind::Pdf => {
                        json!({"type": "file", "file": {"filename": a.filename, "file_data": data}})
                    }
                });
            }
            json!(parts)
        };
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": self.config.system_prompt},
                {"role": "user", "content": user_content},
            ],
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn supports_attachments(&self) -> bool {
        self.config.supports_attachments
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let credential = std::env::var(&self.config.credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| LlmError::CredentialMissing(self.config.credential_env.clone()))?;

        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {credential}"))
            .send_json(self.request_body(request))
            .map_err(|e| self.map_error(e))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| self.map_error(e))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Rejected { status, body });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

impl HttpBackend {
    fn map_error(&self, e: ureq::Error) -> LlmError {
        match e {
            ureq::Error::Timeout(_) => {
                LlmError::Timeout(Duration::from_secs(self.config.timeout_secs))
            }
            other => LlmError::Transport(other.to_string()),
        }
    }
}
