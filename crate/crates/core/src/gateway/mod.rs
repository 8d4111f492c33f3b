//! Language-model backend abstraction and prompt templating.
//!
//! All model calls in the pipeline go through the [`Backend`] trait. Two
//! implementations ship here: [`remote::RemoteBackend`] speaks a
//! chat-completion-style HTTP protocol with retry/backoff and a bounded
//! in-flight window, and [`mock::MockBackend`] answers from scripted fixtures
//! as a pure function of `(messages, seed, fixtures)` so every pipeline path
//! is testable offline.

pub mod builtin;
pub mod config;
pub mod mock;
pub mod remote;
pub mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{build_backend, BackendConfig, BackendKind};
pub use mock::{script_mock, FallbackMode, MockBackend, MockMatcher};
pub use remote::RemoteBackend;
pub use template::{Demonstration, PromptTemplate, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed response body: {message}")]
    Protocol { message: String },
    #[error("no mock fixture matched prompt (digest {digest})")]
    Unmatched { digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Single-user-message request with the pipeline defaults
    /// (temperature 0 for reproducible augmentation records).
    pub fn simple(prompt: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            model_id: String::new(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_tokens: 1024,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages empty".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form of the conversation; what mock matchers and
    /// digests operate on.
    pub fn canonical_prompt(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(role);
            out.push_str(": ");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// A language-model backend. Handles are shareable across threads; remote
/// implementations bound their own in-flight request count.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError>;
}

/// Shared, clonable backend handle.
pub type BackendHandle = Arc<dyn Backend>;

/// One prompt/reply pair captured by a [`RecordingBackend`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub reply: String,
}

/// Wrapper that counts completed calls and captures prompt/reply pairs;
/// the orchestrator uses it to build per-stage run traces.
pub struct RecordingBackend {
    inner: BackendHandle,
    calls: AtomicU64,
    exchanges: std::sync::Mutex<Vec<Exchange>>,
}

impl RecordingBackend {
    pub fn new(inner: BackendHandle) -> Arc<Self> {
        Arc::new(Self {
            inner,
            calls: AtomicU64::new(0),
            exchanges: std::sync::Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Captured exchanges, sorted by prompt so the log is deterministic
    /// even when calls within a stage ran in parallel.
    pub fn exchanges(&self) -> Vec<Exchange> {
        let mut log = self.exchanges.lock().expect("log poisoned").clone();
        log.sort();
        log
    }
}

impl Backend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = self.inner.complete(request)?;
        self.exchanges.lock().expect("log poisoned").push(Exchange {
            prompt: request.canonical_prompt(),
            reply: reply.content.clone(),
        });
        Ok(reply)
    }
}

/// Hex sha256 digest of arbitrary text; used for prompt fingerprints,
/// trace ids, and the mock's echo-hash fallback.
pub fn digest_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}
