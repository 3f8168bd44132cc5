//! In-process backends for tests, benchmarks and offline runs.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use discuss_core::fixtures::discussion_with_humans;
use discuss_core::generation::{ChatRequest, ChatResponse, TokenLogprob};
use discuss_core::transcript::{render_unchecked, InterventionType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, ChatBackend, ClassifierBackend, ClassifierScore};
use crate::clock::Clock;

/// Replays a fixed list of responses, one per call.
pub struct ScriptedChat {
    script: Mutex<VecDeque<Result<ChatResponse, BackendError>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(script: impl IntoIterator<Item = Result<ChatResponse, BackendError>>) -> Self {
        ScriptedChat { script: Mutex::new(script.into_iter().collect()), seen: Mutex::new(Vec::new()) }
    }

    pub fn texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(ChatResponse::text(t))))
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("lock").clone()
    }
}

#[async_trait]
impl ChatBackend for ScriptedChat {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.seen.lock().expect("lock").push(req.clone());
        self.script.lock().expect("lock").pop_front().unwrap_or(Err(BackendError::ScriptExhausted))
    }
}

type ChatFn = dyn Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync;

/// Answers with a closure after an optional delay on the given clock.
pub struct FnChat {
    f: Box<ChatFn>,
    delay: Duration,
    clock: Arc<dyn Clock>,
}

impl FnChat {
    pub fn new<F>(clock: Arc<dyn Clock>, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync + 'static,
    {
        FnChat { f: Box::new(f), delay: Duration::ZERO, clock }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[async_trait]
impl ChatBackend for FnChat {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.clock.sleep(self.delay).await;
        (self.f)(req)
    }
}

/// A response whose single token carries `logprob`.
pub fn token_response(token: &str, logprob: f64) -> ChatResponse {
    ChatResponse {
        text: token.to_string(),
        token_logprobs: Some(vec![TokenLogprob { token: token.to_string(), logprob }]),
        ..Default::default()
    }
}

/// Plays both sides of the end-to-end model: one-token decision calls get
/// `first_token`, longer calls get `reply` with fixed per-token logprobs.
pub fn e2e_chat(clock: Arc<dyn Clock>, first_token: Arc<Mutex<String>>, reply: &str, delay: Duration) -> FnChat {
    let reply = reply.to_string();
    FnChat::new(clock, move |req| {
        if req.max_tokens <= 1 {
            Ok(token_response(&first_token.lock().expect("lock"), -0.05))
        } else {
            Ok(words_response(&reply, -1.0))
        }
    })
    .with_delay(delay)
}

/// `text` with one token per whitespace-separated word, each at `logprob`.
pub fn words_response(text: &str, logprob: f64) -> ChatResponse {
    ChatResponse {
        text: text.to_string(),
        token_logprobs: Some(
            text.split_whitespace().map(|w| TokenLogprob { token: w.to_string(), logprob }).collect(),
        ),
        ..Default::default()
    }
}

/// Classifier returning a settable probability after an optional delay.
pub struct FixedClassifier {
    probability: Mutex<f64>,
    delay: Duration,
    clock: Arc<dyn Clock>,
}

impl FixedClassifier {
    pub fn new(clock: Arc<dyn Clock>, probability: f64) -> Self {
        FixedClassifier { probability: Mutex::new(probability), delay: Duration::ZERO, clock }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn set_probability(&self, p: f64) {
        *self.probability.lock().expect("lock") = p;
    }
}

#[async_trait]
impl ClassifierBackend for FixedClassifier {
    async fn score(&self, _context: &str) -> Result<ClassifierScore, BackendError> {
        self.clock.sleep(self.delay).await;
        Ok(ClassifierScore { probability: *self.probability.lock().expect("lock"), gpu_memory_gb: None })
    }
}

type ScoreFn = dyn Fn(&str) -> f64 + Send + Sync;

/// Classifier computed by a closure over the rendered context.
pub struct FnClassifier {
    f: Box<ScoreFn>,
    delay: Duration,
    clock: Arc<dyn Clock>,
}

impl FnClassifier {
    pub fn new<F: Fn(&str) -> f64 + Send + Sync + 'static>(clock: Arc<dyn Clock>, f: F) -> Self {
        FnClassifier { f: Box::new(f), delay: Duration::ZERO, clock }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[async_trait]
impl ClassifierBackend for FnClassifier {
    async fn score(&self, context: &str) -> Result<ClassifierScore, BackendError> {
        self.clock.sleep(self.delay).await;
        Ok(ClassifierScore { probability: (self.f)(context), gpu_memory_gb: None })
    }
}

/// Toy heuristic used by the offline demo backends: speak after a question.
pub fn ends_with_question(context: &str) -> bool {
    context.trim_end().lines().last().is_some_and(|l| l.trim_end().ends_with('?'))
}

/// Chat backend for offline demos: speaks after questions, otherwise stays
/// silent, and always answers with the same short intervention.
pub fn demo_chat(clock: Arc<dyn Clock>, delay: Duration) -> FnChat {
    FnChat::new(clock, |req| {
        if req.max_tokens <= 1 {
            let tok = if ends_with_question(req.prompt()) { "Nexus" } else { ">" };
            Ok(token_response(tok, -0.1))
        } else {
            Ok(words_response("Quick note: a reliable source would settle this.", -0.7))
        }
    })
    .with_delay(delay)
}

/// Classifier counterpart of [`demo_chat`].
pub fn demo_classifier(clock: Arc<dyn Clock>, delay: Duration) -> FnClassifier {
    FnClassifier::new(clock, |ctx| if ends_with_question(ctx) { 0.9 } else { 0.1 }).with_delay(delay)
}

/// Offline stand-in for the data-generation model.
///
/// Recognizes the two generation prompts and answers deterministically from
/// a hash of the prompt and the request seed: a scenario object for the
/// first, a valid transcript with the requested participant count for the
/// second. `malformed_every` makes every n-th call return junk so retry paths
/// get exercised.
#[derive(Debug, Clone, Default)]
pub struct SyntheticGenerator {
    pub malformed_every: Option<u64>,
}

impl SyntheticGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    fn respond(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let prompt = req.prompt();
        let key = crate::stable_hash(&[prompt.as_bytes(), &req.seed.unwrap_or(0).to_le_bytes()]);
        if self.malformed_every.is_some_and(|n| n > 0 && key.is_multiple_of(n)) {
            return Ok(ChatResponse::text("I'm sorry, I can't help with that."));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        if let Some(topic) = field(prompt, "- Topic (User's Question): ") {
            let kind = InterventionType::ALL[rng.random_range(0..InterventionType::ALL.len())];
            let obj = serde_json::json!({
                "topic": topic,
                "context": format!("A group of friends debating \"{topic}\" over coffee."),
                "ai_intervention_type": kind.label(),
            });
            return Ok(ChatResponse::text(format!("Here is the scenario:\n```json\n{obj:#}\n```")));
        }
        if let Some(count) = human_count(prompt) {
            let mut d = discussion_with_humans(&mut rng, count);
            let topic = field(prompt, "- Topic: ").unwrap_or_default();
            let context = field(prompt, "- Context: ").unwrap_or_default();
            d.scenario_setup = Some(format!("Topic: {topic}\nContext: {context}"));
            return Ok(ChatResponse::text(render_unchecked(&d)));
        }
        Err(BackendError::Decode("synthetic generator got an unrecognized prompt".into()))
    }
}

fn field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

fn human_count(prompt: &str) -> Option<usize> {
    let rest = prompt.split("must feature ").nth(1)?;
    rest.split_whitespace().next()?.parse().ok()
}

#[async_trait]
impl ChatBackend for SyntheticGenerator {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.respond(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use discuss_core::corpus::SourceRecord;
    use discuss_core::generation::{extract_scenario, render_stage1_prompt, render_stage2_prompt};
    use discuss_core::transcript::validate_transcript;

    #[tokio::test]
    async fn synthetic_generator_answers_both_stages() {
        let g = SyntheticGenerator::new();
        let rec = SourceRecord {
            id: "q1".into(),
            title: "Why is the sky blue during the day?".into(),
            content: "I have always wondered about this and never found a convincing explanation anywhere.".into(),
        };
        let r1 = g.complete(&ChatRequest::user(render_stage1_prompt(&rec).unwrap(), 0.8, 512)).await.unwrap();
        let s = extract_scenario(&r1.text, "q1").unwrap();
        assert_eq!(s.topic, rec.title);
        for n in 2..=6 {
            let r2 = g.complete(&ChatRequest::user(render_stage2_prompt(&s, n).unwrap(), 0.8, 2048)).await.unwrap();
            let (d, report) = validate_transcript(&r2.text);
            assert!(report.ok, "{report}");
            assert_eq!(d.unwrap().human_speakers().len(), n);
        }
    }

    #[tokio::test]
    async fn scripted_chat_runs_out() {
        let c = ScriptedChat::texts(["a"]);
        let req = ChatRequest::user("x", 0.0, 1);
        assert_eq!(c.complete(&req).await.unwrap().text, "a");
        assert_eq!(c.complete(&req).await, Err(BackendError::ScriptExhausted));
        assert_eq!(c.requests().len(), 2);
    }
}
