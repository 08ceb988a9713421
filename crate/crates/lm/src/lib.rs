//! Language-model access for dialogue generation.
//!
//! Backends implement [`LanguageModel`]. [`LmClient`] wraps a backend with
//! retries and an optional JSONL audit log; a recorded log can be turned back
//! into a [`MockBackend`] for exact replays.

mod client;
mod mock;
mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use client::{AuditLog, AuditOutcome, AuditRecord, CompletionResult, LmClient, RetryPolicy};
pub use mock::{MockBackend, MockMode, MockReply, MockScript};
pub use remote::{RemoteBackend, RemoteConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};

/// Sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub seed: Option<u64>,
}

impl Default for LmParams {
    fn default() -> Self {
        LmParams {
            temperature: 0.7,
            top_p: 1.0,
            max_tokens: 1024,
            stop: Vec::new(),
            seed: None,
        }
    }
}

impl LmParams {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.max_tokens == 0 {
            return Err(LmError::InvalidParams("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LmError::InvalidParams("temperature must be non-negative".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LmError::InvalidParams("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Assigned by [`LmClient`] when empty.
    #[serde(default)]
    pub request_id: String,
    pub prompt: String,
    #[serde(flatten)]
    pub params: LmParams,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, params: LmParams) -> Self {
        CompletionRequest {
            request_id: String::new(),
            prompt: prompt.into(),
            params,
        }
    }

    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

/// Text returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl RawCompletion {
    pub fn stop(text: impl Into<String>) -> Self {
        RawCompletion {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

/// Hex SHA-256 of the prompt text, used to key scripted and replayed responses.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response ({message}): {body}")]
    Malformed { message: String, body: String },
    #[error("invalid request parameters: {0}")]
    InvalidParams(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("mock script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("mock script has no response for prompt {key}")]
    NoScriptEntry { key: String },
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LmError {
    /// Errors worth another attempt: transport failures, rate limits, server
    /// errors, and scripted failures.
    pub fn is_retryable(&self) -> bool {
        match self {
            LmError::Transport(_) | LmError::Scripted(_) => true,
            LmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A text-completion backend.
pub trait LanguageModel: Send + Sync {
    /// Short backend name for logs and audit records.
    fn name(&self) -> &str;

    /// Model identifier, if the backend has one.
    fn model(&self) -> &str {
        ""
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, LmError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex_sha256() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn request_serializes_flat() {
        let r = CompletionRequest::new("hi", LmParams::default());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["temperature"], 0.7);
        assert_eq!(v["max_tokens"], 1024);
        let back: CompletionRequest = serde_json::from_value(serde_json::json!({"prompt": "x"})).unwrap();
        assert_eq!(back.params, LmParams::default());
    }

    #[test]
    fn params_are_validated() {
        assert!(LmParams::default().validate().is_ok());
        let zero = LmParams {
            max_tokens: 0,
            ..LmParams::default()
        };
        assert!(matches!(zero.validate(), Err(LmError::InvalidParams(_))));
        let cold = LmParams {
            temperature: -0.1,
            ..LmParams::default()
        };
        assert!(cold.validate().is_err());
    }

    #[test]
    fn retryable_classification() {
        assert!(LmError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(LmError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(!LmError::Status { status: 401, body: String::new() }.is_retryable());
        assert!(!LmError::ScriptExhausted { served: 1 }.is_retryable());
    }
}
