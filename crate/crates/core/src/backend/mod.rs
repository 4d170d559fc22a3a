//! Chat-completion backends.
//!
//! [`ChatBackend`] is the only way the engine talks to a model. Three
//! implementations ship: [`LiveBackend`] (HTTP chat-completions),
//! [`ReplayBackend`] (scripted responses from a `.chatlog` fixture), and
//! [`RecordingBackend`] (proxies a live backend while writing a fixture).

mod ledger;
mod live;
mod replay;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use ledger::{LedgerError, PriceTable, UsageEntry, UsageLedger, UsageTotals};
pub use live::{LiveBackend, BASE_URL_ENV, API_KEY_ENV};
pub use replay::{parse_fixture, FixtureRecord, RecordingBackend, ReplayBackend, ReplayMode};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("replay fixture exhausted: no record for call #{index}")]
    FixtureExhausted { index: usize },

    #[error("prompt drift at call #{index}: fixture digest {expected}, request digest {actual}")]
    Drift {
        index: usize,
        expected: String,
        actual: String,
    },

    #[error("fixture error: {0}")]
    Fixture(String),

    #[error("fixture I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Transport failures and throttling/server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    /// The instructor speaks as the `user` on the wire.
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return bad("message list is empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        Ok(())
    }

    /// SHA-256 over roles and contents; stable across runs and platforms.
    pub fn prompt_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for m in &self.messages {
            let role = match m.role {
                MessageRole::System => "system",
                MessageRole::User => "user",
                MessageRole::Assistant => "assistant",
            };
            hasher.update(role.as_bytes());
            hasher.update([0u8]);
            hasher.update(m.content.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}
