use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;

use super::{BackendError, ClassifierBackend, ClassifierScore, ENV_API_KEY, ENV_CLASSIFIER_URL};

/// `POST {url}` with `{"context": ...}`, answered by `{"probability": p}`.
#[derive(Debug, Clone)]
pub struct HttpClassifier {
    http: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    context: &'a str,
}

impl HttpClassifier {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpClassifier {
            http: reqwest::Client::builder().timeout(Duration::from_secs(30)).build().expect("http client"),
            url: url.into(),
            api_key,
        }
    }

    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_CLASSIFIER_URL).ok()?;
        Some(Self::new(url, std::env::var(ENV_API_KEY).ok()))
    }
}

#[async_trait]
impl ClassifierBackend for HttpClassifier {
    async fn score(&self, context: &str) -> Result<ClassifierScore, BackendError> {
        let mut call = self.http.post(&self.url).json(&ScoreRequest { context });
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        let score: ClassifierScore = resp.json().await.map_err(|e| BackendError::Decode(e.to_string()))?;
        if !(0.0..=1.0).contains(&score.probability) {
            return Err(BackendError::Decode(format!("probability {} outside [0, 1]", score.probability)));
        }
        Ok(score)
    }
}
