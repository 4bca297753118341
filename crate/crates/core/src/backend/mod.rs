//! Chat-completion execution: request canonicalization, the record/replay
//! cache, rate limiting, retries and the backends themselves.

mod cache;
mod executor;
mod http;
mod limiter;
mod mock;
mod tokens;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{ChatTurn, Role};

pub use cache::RecordCache;
pub use executor::{execute_plan, CompletionOutcome, Executor, LogEntry, PlanOutcome, RequestParams};
pub use http::OpenAiBackend;
pub use limiter::{InFlightGate, RateLimiter, RatePolicy};
pub use mock::{mock_complete, MockBackend, Rule, Rulebook};
pub use tokens::{estimate_tokens, HeuristicCounter, TokenCounter};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport: {message}")]
    Transport { message: String, retryable: bool },
    #[error("transport failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("response schema violation: {0}")]
    Schema(String),
    #[error("replay-only mode: no cached record for request {0}")]
    CacheMiss(String),
    #[error("request needs ~{tokens} tokens but the per-minute budget is {budget}")]
    RequestTooLarge { tokens: u64, budget: u64 },
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport { retryable: true, .. })
    }

    /// Whether the failure came from the network side rather than the inputs.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Self::Transport { .. } | Self::RetriesExhausted { .. } | Self::Schema(_) | Self::CacheMiss(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub turns: Vec<ChatTurn>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

/// Hashed request fields. The canonical byte form goes through
/// `serde_json::Value`, whose object keys serialize sorted, so a stored
/// request re-hashes to the same digest after a parse round trip.
#[derive(Serialize)]
struct Canonical<'a> {
    backend_id: &'a str,
    model: &'a str,
    temperature: f64,
    max_output_tokens: Option<u32>,
    turns: &'a [ChatTurn],
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let first = self
            .turns
            .first()
            .ok_or_else(|| BackendError::InvalidRequest("no turns".into()))?;
        if first.role != Role::User {
            return Err(BackendError::InvalidRequest("first turn must be from the user".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_output_tokens == Some(0) {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn canonical_json(&self, backend_id: &str) -> String {
        let value = serde_json::to_value(Canonical {
            backend_id,
            model: &self.model,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            turns: &self.turns,
        })
        .expect("request serializes");
        value.to_string()
    }

    pub fn digest(&self, backend_id: &str) -> String {
        hex::encode(Sha256::digest(self.canonical_json(backend_id).as_bytes()))
    }

    /// Content of the last user turn.
    pub fn last_user_text(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub request_digest: String,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Token counts came from the local counter, not the backend.
    pub tokens_estimated: bool,
    pub latency_ms: u64,
    pub backend_id: String,
    /// Unix milliseconds; 0 for synthetic backends.
    pub timestamp_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub usage: Option<Usage>,
}

/// Something that answers chat-completion requests.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn send(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError>;

    /// Synthetic backends produce records with zero latency and timestamp.
    fn is_synthetic(&self) -> bool {
        false
    }
}
