//! Text-generation and embedding providers.

use std::sync::Mutex;

use bot_core::chat::{ChatRequest, ChatResponse, EmbeddingVector, RequestError};
use bot_core::{Role, TokenLedger, TokenUsage};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("provider response carried no usage block")]
    UsageMissing,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embeddings have inconsistent dimensions")]
    DimensionMismatch,
    #[error(transparent)]
    InvalidRequest(#[from] RequestError),
    #[error("script exhausted or invalid: {0}")]
    Script(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Check that a provider's vectors agree in dimension.
pub fn check_dims(vectors: &[EmbeddingVector]) -> Result<(), BackendError> {
    match vectors.first() {
        Some(first) if vectors.iter().any(|v| v.dim() != first.dim()) => Err(BackendError::DimensionMismatch),
        _ => Ok(()),
    }
}

/// A ledger many threads can record into.
#[derive(Debug, Default)]
pub struct SharedLedger(Mutex<TokenLedger>);

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, role: Role, usage: TokenUsage) {
        self.0.lock().expect("ledger lock poisoned").record(role, usage);
    }

    pub fn snapshot(&self) -> TokenLedger {
        *self.0.lock().expect("ledger lock poisoned")
    }
}

/// Whitespace-separated word count, the stand-in tokenizer for scripted runs.
pub fn count_words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Input size of a request under [`count_words`]: every message body plus
/// any tool call it carries.
pub fn request_words(request: &ChatRequest) -> u64 {
    request
        .messages
        .iter()
        .map(|m| {
            count_words(&m.content)
                + m.tool_call
                    .as_ref()
                    .map_or(0, |c| count_words(&c.name) + count_words(&c.arguments))
        })
        .sum()
}
