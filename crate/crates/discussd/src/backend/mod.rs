//! Inference backends: chat completion for generation and a scoring
//! endpoint for the intervention classifier.

mod classifier;
pub mod mock;
mod openai;

use async_trait::async_trait;
use discuss_core::generation::{ChatRequest, ChatResponse};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::HttpClassifier;
pub use openai::{OpenAiClient, DEFAULT_MODEL};

pub const ENV_BACKEND_URL: &str = "DISCUSSD_BACKEND_URL";
pub const ENV_CLASSIFIER_URL: &str = "DISCUSSD_CLASSIFIER_URL";
pub const ENV_API_KEY: &str = "DISCUSSD_API_KEY";
pub const ENV_MODEL: &str = "DISCUSSD_MODEL";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
}

impl BackendError {
    /// Worth another attempt: network trouble, throttling, server faults.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Classifier output for one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_memory_gb: Option<f64>,
}

#[async_trait]
pub trait ClassifierBackend: Send + Sync {
    /// Probability that the assistant should speak after `context`.
    async fn score(&self, context: &str) -> Result<ClassifierScore, BackendError>;
}
