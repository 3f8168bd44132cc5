//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use async_trait::async_trait;
use discuss_core::generation::{ChatMessage, ChatRequest, ChatResponse, TokenLogprob, Usage};
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ENV_API_KEY, ENV_BACKEND_URL, ENV_MODEL};

pub const DEFAULT_MODEL: &str = "meta-llama/Meta-Llama-3-8B-Instruct";

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    gpu_memory_gb: Option<f64>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct OpenAiClient {
    http: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    transport_retries: u32,
}

impl OpenAiClient {
    /// `base_url` may be the API root (`.../v1`) or the full
    /// `/chat/completions` URL.
    pub fn new(base_url: &str, api_key: Option<String>, model: impl Into<String>) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint =
            if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        OpenAiClient {
            http: reqwest::Client::builder().timeout(Duration::from_secs(120)).build().expect("http client"),
            endpoint,
            api_key,
            model: model.into(),
            transport_retries: 2,
        }
    }

    /// Reads `DISCUSSD_BACKEND_URL`, `DISCUSSD_API_KEY` and `DISCUSSD_MODEL`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_BACKEND_URL).ok()?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Some(Self::new(&url, std::env::var(ENV_API_KEY).ok(), model))
    }

    pub fn with_transport_retries(mut self, n: u32) -> Self {
        self.transport_retries = n;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    async fn once(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = WireRequest {
            model: &self.model,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            seed: req.seed,
            logprobs: req.logprobs,
        };
        let mut call = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        let wire: WireResponse = resp.json().await.map_err(|e| BackendError::Decode(e.to_string()))?;
        decode(wire)
    }
}

fn decode(wire: WireResponse) -> Result<ChatResponse, BackendError> {
    let choice = wire.choices.into_iter().next().ok_or_else(|| BackendError::Decode("no choices".into()))?;
    let token_logprobs = match choice.logprobs.and_then(|l| l.content) {
        Some(tokens) => {
            if let Some(bad) = tokens.iter().find(|t| t.logprob.is_nan() || t.logprob > 0.0) {
                return Err(BackendError::Decode(format!("log-probability {} for {:?} is not <= 0", bad.logprob, bad.token)));
            }
            Some(tokens)
        }
        None => None,
    };
    Ok(ChatResponse {
        text: choice.message.content.unwrap_or_default(),
        token_logprobs,
        usage: wire
            .usage
            .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens })
            .unwrap_or_default(),
        gpu_memory_gb: wire.gpu_memory_gb,
    })
}

#[async_trait]
impl ChatBackend for OpenAiClient {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut attempt = 0;
        loop {
            match self.once(req).await {
                Err(e) if e.is_transient() && attempt < self.transport_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, "chat backend call failed, retrying");
                    tokio::time::sleep(Duration::from_millis(200 << attempt)).await;
                }
                other => return other,
            }
        }
    }
}
