//! Speak-or-stay-silent policies.
//!
//! The end-to-end policy asks the fine-tuned model for one token and treats
//! the silence marker as "stay quiet". The decoupled policy scores the context
//! with a classifier, compares against a threshold, and hands off to a
//! separate generator when it decides to speak.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use discuss_core::decision::{e2e_decision, threshold_decision, valid_threshold, Label, DEFAULT_THRESHOLD};
use discuss_core::generation::{ChatMessage, ChatRequest, ChatResponse};
use discuss_core::training::{render_classifier_context, render_e2e_prefix, BasicTokenizer, DEFAULT_CONTEXT_CHARS};
use discuss_core::transcript::{Turn, NEXUS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ClassifierBackend, HttpClassifier, OpenAiClient};

pub const E2E_SYSTEM_PROMPT: &str = "You are Nexus, an assistant listening to a group discussion. \
After each message, reply with a single \">\" to stay silent, or speak as \"Nexus: ...\" when a brief, \
useful intervention would help the group.";

pub const GENERATOR_SYSTEM_PROMPT: &str = "You are Nexus, an assistant in a group discussion. \
Write one brief, useful intervention for the discussion so far. Reply with the intervention text only.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    EndToEnd,
    Decoupled,
}

/// How turns posted while a decision is pending are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// Turns are processed one at a time; each decision sees exactly the
    /// turns posted before it.
    #[default]
    Strict,
    /// New turns are appended while an earlier decision is in flight; the
    /// earlier decision keeps the context it started with.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_url: Option<String>,
    #[serde(default)]
    pub mode: IngestMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid policy config: {0}")]
pub struct InvalidPolicyConfig(pub String);

impl PolicyConfig {
    pub fn end_to_end() -> Self {
        PolicyConfig { kind: PolicyKind::EndToEnd, threshold: None, backend_url: None, classifier_url: None, mode: IngestMode::Strict }
    }

    pub fn decoupled(threshold: f64) -> Self {
        PolicyConfig { kind: PolicyKind::Decoupled, threshold: Some(threshold), ..Self::end_to_end() }
    }

    /// Checks that do not depend on how backends get built. Fills in the
    /// default threshold for the decoupled policy.
    pub fn validated(mut self) -> Result<Self, InvalidPolicyConfig> {
        match self.kind {
            PolicyKind::EndToEnd => {
                if self.threshold.is_some() {
                    return Err(InvalidPolicyConfig("threshold applies only to the decoupled policy".into()));
                }
            }
            PolicyKind::Decoupled => {
                let t = *self.threshold.get_or_insert(DEFAULT_THRESHOLD);
                if !valid_threshold(t) {
                    return Err(InvalidPolicyConfig(format!("threshold {t} must lie strictly between 0 and 1")));
                }
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub decision: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_memory_gb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_memory_gb: Option<f64>,
}

#[async_trait]
pub trait DecisionPolicy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    async fn decide(&self, context: &[Turn]) -> Result<DecisionOutcome, BackendError>;

    async fn generate(&self, context: &[Turn]) -> Result<Intervention, BackendError>;

    /// Returns false when the policy has no threshold.
    fn set_threshold(&self, _threshold: f64) -> bool {
        false
    }

    fn threshold(&self) -> Option<f64> {
        None
    }
}

/// Drop a leading `Nexus:` the model may echo.
fn strip_speaker(text: &str) -> String {
    let t = text.trim();
    t.strip_prefix(NEXUS).and_then(|r| r.strip_prefix(':')).map_or(t, str::trim_start).trim().to_string()
}

fn intervention(resp: ChatResponse) -> Intervention {
    Intervention {
        text: strip_speaker(&resp.text),
        logprobs: resp.token_logprobs.map(|v| v.into_iter().map(|t| t.logprob).collect()),
        gpu_memory_gb: resp.gpu_memory_gb,
    }
}

/// First token of a completion: the backend's own token when logprobs were
/// returned, otherwise the first token of the text.
pub fn first_token(resp: &ChatResponse) -> String {
    if let Some(t) = resp.token_logprobs.as_ref().and_then(|v| v.first()) {
        return t.token.clone();
    }
    let text = resp.text.trim_start();
    BasicTokenizer::spans(text).first().map_or_else(String::new, |&(s, e)| text[s..e].to_string())
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings { temperature: 0.7, max_tokens: 256 }
    }
}

pub struct EndToEndPolicy {
    model: Arc<dyn ChatBackend>,
    settings: GenerationSettings,
}

impl EndToEndPolicy {
    pub fn new(model: Arc<dyn ChatBackend>) -> Self {
        EndToEndPolicy { model, settings: GenerationSettings::default() }
    }

    fn request(&self, context: &[Turn], max_tokens: u32, temperature: f64) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system(E2E_SYSTEM_PROMPT), ChatMessage::user(render_e2e_prefix(context))],
            temperature,
            max_tokens,
            seed: None,
            logprobs: true,
        }
    }
}

#[async_trait]
impl DecisionPolicy for EndToEndPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::EndToEnd
    }

    async fn decide(&self, context: &[Turn]) -> Result<DecisionOutcome, BackendError> {
        let resp = self.model.complete(&self.request(context, 1, 0.0)).await?;
        let tok = first_token(&resp);
        Ok(DecisionOutcome {
            decision: e2e_decision(&tok),
            probability: None,
            first_token: Some(tok),
            gpu_memory_gb: resp.gpu_memory_gb,
        })
    }

    async fn generate(&self, context: &[Turn]) -> Result<Intervention, BackendError> {
        let resp = self.model.complete(&self.request(context, self.settings.max_tokens, self.settings.temperature)).await?;
        Ok(intervention(resp))
    }
}

pub struct DecoupledPolicy {
    classifier: Arc<dyn ClassifierBackend>,
    generator: Arc<dyn ChatBackend>,
    threshold_bits: AtomicU64,
    context_chars: usize,
    settings: GenerationSettings,
}

impl DecoupledPolicy {
    pub fn new(classifier: Arc<dyn ClassifierBackend>, generator: Arc<dyn ChatBackend>, threshold: f64) -> Self {
        assert!(valid_threshold(threshold), "threshold {threshold} must lie strictly between 0 and 1");
        DecoupledPolicy {
            classifier,
            generator,
            threshold_bits: AtomicU64::new(threshold.to_bits()),
            context_chars: DEFAULT_CONTEXT_CHARS,
            settings: GenerationSettings::default(),
        }
    }
}

#[async_trait]
impl DecisionPolicy for DecoupledPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Decoupled
    }

    async fn decide(&self, context: &[Turn]) -> Result<DecisionOutcome, BackendError> {
        // read before scoring so a concurrent update applies from the next decision on
        let t = f64::from_bits(self.threshold_bits.load(Ordering::SeqCst));
        let score = self.classifier.score(&render_classifier_context(context, self.context_chars)).await?;
        Ok(DecisionOutcome {
            decision: threshold_decision(score.probability, t),
            probability: Some(score.probability),
            first_token: None,
            gpu_memory_gb: score.gpu_memory_gb,
        })
    }

    async fn generate(&self, context: &[Turn]) -> Result<Intervention, BackendError> {
        let transcript: Vec<String> = context.iter().map(Turn::line).collect();
        let req = ChatRequest {
            messages: vec![ChatMessage::system(GENERATOR_SYSTEM_PROMPT), ChatMessage::user(transcript.join("\n"))],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            seed: None,
            logprobs: true,
        };
        Ok(intervention(self.generator.complete(&req).await?))
    }

    fn set_threshold(&self, threshold: f64) -> bool {
        if !valid_threshold(threshold) {
            return false;
        }
        self.threshold_bits.store(threshold.to_bits(), Ordering::SeqCst);
        true
    }

    fn threshold(&self) -> Option<f64> {
        Some(f64::from_bits(self.threshold_bits.load(Ordering::SeqCst)))
    }
}

/// Builds the policy for a session from its config.
pub trait PolicyFactory: Send + Sync {
    fn build(&self, cfg: &PolicyConfig) -> Result<Arc<dyn DecisionPolicy>, InvalidPolicyConfig>;
}

/// Talks to real endpoints. URLs come from the config or, failing that,
/// from the environment.
#[derive(Debug, Clone, Default)]
pub struct HttpPolicyFactory {
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub default_backend_url: Option<String>,
    pub default_classifier_url: Option<String>,
}

impl HttpPolicyFactory {
    pub fn from_env() -> Self {
        use crate::backend::{ENV_API_KEY, ENV_BACKEND_URL, ENV_CLASSIFIER_URL, ENV_MODEL};
        HttpPolicyFactory {
            api_key: std::env::var(ENV_API_KEY).ok(),
            model: std::env::var(ENV_MODEL).ok(),
            default_backend_url: std::env::var(ENV_BACKEND_URL).ok(),
            default_classifier_url: std::env::var(ENV_CLASSIFIER_URL).ok(),
        }
    }
}

impl PolicyFactory for HttpPolicyFactory {
    fn build(&self, cfg: &PolicyConfig) -> Result<Arc<dyn DecisionPolicy>, InvalidPolicyConfig> {
        let cfg = cfg.clone().validated()?;
        let backend_url = cfg
            .backend_url
            .clone()
            .or_else(|| self.default_backend_url.clone())
            .ok_or_else(|| InvalidPolicyConfig("backend_url is required".into()))?;
        let model = self.model.clone().unwrap_or_else(|| crate::backend::DEFAULT_MODEL.to_string());
        let chat: Arc<dyn ChatBackend> = Arc::new(OpenAiClient::new(&backend_url, self.api_key.clone(), model));
        Ok(match cfg.kind {
            PolicyKind::EndToEnd => Arc::new(EndToEndPolicy::new(chat)),
            PolicyKind::Decoupled => {
                let url = cfg
                    .classifier_url
                    .clone()
                    .or_else(|| self.default_classifier_url.clone())
                    .ok_or_else(|| InvalidPolicyConfig("classifier_url is required for the decoupled policy".into()))?;
                let classifier = Arc::new(HttpClassifier::new(url, self.api_key.clone()));
                Arc::new(DecoupledPolicy::new(classifier, chat, cfg.threshold.unwrap_or(DEFAULT_THRESHOLD)))
            }
        })
    }
}

/// Builds policies over fixed in-process backends, ignoring URLs.
pub struct StaticPolicyFactory {
    pub chat: Arc<dyn ChatBackend>,
    pub classifier: Option<Arc<dyn ClassifierBackend>>,
}

impl PolicyFactory for StaticPolicyFactory {
    fn build(&self, cfg: &PolicyConfig) -> Result<Arc<dyn DecisionPolicy>, InvalidPolicyConfig> {
        let cfg = cfg.clone().validated()?;
        Ok(match cfg.kind {
            PolicyKind::EndToEnd => Arc::new(EndToEndPolicy::new(self.chat.clone())),
            PolicyKind::Decoupled => {
                let classifier = self
                    .classifier
                    .clone()
                    .ok_or_else(|| InvalidPolicyConfig("no classifier backend configured".into()))?;
                Arc::new(DecoupledPolicy::new(classifier, self.chat.clone(), cfg.threshold.unwrap_or(DEFAULT_THRESHOLD)))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{token_response, words_response, FixedClassifier, ScriptedChat};
    use crate::clock::ManualClock;

    fn ctx() -> Vec<Turn> {
        vec![Turn::human("Ann", "Is that right?"), Turn::human("Bo", "Not sure.")]
    }

    #[tokio::test]
    async fn e2e_reads_first_token() {
        let chat = Arc::new(ScriptedChat::new([Ok(token_response(">", -0.01)), Ok(token_response("Nexus", -0.2))]));
        let p = EndToEndPolicy::new(chat.clone());
        assert_eq!(p.decide(&ctx()).await.unwrap().decision, Label::Silent);
        assert_eq!(p.decide(&ctx()).await.unwrap().decision, Label::Speak);
        let reqs = chat.requests();
        assert_eq!(reqs[0].max_tokens, 1);
        assert!(reqs[0].logprobs);
        assert!(reqs[0].prompt().ends_with("Bo: Not sure.\n"));
    }

    #[tokio::test]
    async fn e2e_first_token_falls_back_to_text() {
        let chat = Arc::new(ScriptedChat::texts(["  > ", "Actually"]));
        let p = EndToEndPolicy::new(chat);
        assert_eq!(p.decide(&ctx()).await.unwrap().first_token.as_deref(), Some(">"));
        assert_eq!(p.decide(&ctx()).await.unwrap().decision, Label::Speak);
    }

    #[tokio::test]
    async fn generation_strips_speaker_prefix() {
        let chat = Arc::new(ScriptedChat::new([Ok(words_response("Nexus: It was chosen in 1968.", -0.5))]));
        let g = EndToEndPolicy::new(chat).generate(&ctx()).await.unwrap();
        assert_eq!(g.text, "It was chosen in 1968.");
        assert_eq!(g.logprobs.unwrap().len(), 6);
    }

    #[tokio::test]
    async fn decoupled_threshold() {
        let clock = Arc::new(ManualClock::new());
        let clf = Arc::new(FixedClassifier::new(clock, 0.6));
        let p = DecoupledPolicy::new(clf.clone(), Arc::new(ScriptedChat::texts(Vec::<String>::new())), 0.5);
        assert_eq!(p.decide(&ctx()).await.unwrap().decision, Label::Speak);
        assert!(p.set_threshold(0.7));
        assert_eq!(p.decide(&ctx()).await.unwrap().decision, Label::Silent);
        assert!(!p.set_threshold(1.0));
        assert_eq!(p.threshold(), Some(0.7));
    }

    #[test]
    fn config_validation() {
        assert_eq!(PolicyConfig { threshold: None, ..PolicyConfig::decoupled(0.5) }.validated().unwrap().threshold, Some(0.5));
        assert!(PolicyConfig::decoupled(1.5).validated().is_err());
        assert!(PolicyConfig::decoupled(0.0).validated().is_err());
        assert!(PolicyConfig { threshold: Some(0.4), ..PolicyConfig::end_to_end() }.validated().is_err());
        let f = HttpPolicyFactory::default();
        assert!(f.build(&PolicyConfig::end_to_end()).is_err());
        let with_url = PolicyConfig { backend_url: Some("http://127.0.0.1:9/v1".into()), ..PolicyConfig::decoupled(0.5) };
        assert!(f.build(&with_url).is_err(), "decoupled needs a classifier url");
    }

    #[test]
    fn config_wire_format() {
        let cfg: PolicyConfig = serde_json::from_str(r#"{"kind":"decoupled","threshold":0.3}"#).unwrap();
        assert_eq!(cfg.mode, IngestMode::Strict);
        assert_eq!(cfg.kind, PolicyKind::Decoupled);
    }
}
