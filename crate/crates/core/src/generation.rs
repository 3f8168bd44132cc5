//! Prompt templates, scenario extraction, and the chat wire types shared by
//! every backend.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::SourceRecord;
use crate::transcript::{InterventionType, MAX_HUMANS, MIN_HUMANS};

pub const STAGE1_TEMPLATE: &str = "\
You are a creative scenario writer. Your task is to generate a single, detailed scenario JSON object based on a user's question and its detailed background.

Input Information:
- Topic (User's Question): {topic}
- Background Info (User's description): {background_info}

Task: Based on the provided information, create a complete scenario by performing these steps:
1. Invent a Social Context: Create a one-sentence `context` describing who would be discussing this topic.
2. Select an Intervention Type: Choose the most logical `ai_intervention_type` from: [Factual Correction, Concept Definition, Data Provision, Source Identification, Synthesis & Reframing].

Output Format: You must output ONLY the raw JSON object.";

pub const STAGE2_TEMPLATE: &str = "\
You are a sophisticated data generator. Your task is to generate a realistic group discussion transcript based on the provided scenario.

Rules:
1. The discussion must feature {human_count} human participants and one AI assistant named **Nexus**.
2. Nexus appears only once, with its dialogue enclosed by [AI_APPEARED] and [/AI_DISAPPEARED] on new lines.
3. The discussion should feel natural, with a clear trigger for Nexus's intervention.
4. After Nexus speaks, humans should react naturally and continue the discussion.

Scenario Details:
- Topic: {topic}
- Context: {context}
- AI Intervention Type: {ai_intervention_type}

Output Format Example:
[SCENARIO_SETUP]
...
[/SCENARIO_SETUP]
[DISCUSSION_START]
Name: Dialogue text...
Name: Dialogue text that creates the trigger...
[AI_APPEARED]
Nexus: The brief, value-add intervention.
[/AI_DISAPPEARED]
Name: Reaction to the AI's input...
[/DISCUSSION_END]";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("seed record {id:?} has an empty {field}")]
    InvalidSeed { id: String, field: &'static str },
    #[error("no JSON object found in completion")]
    NoObjectFound,
    #[error("scenario object lacks field {0:?}")]
    MissingField(&'static str),
    #[error("unknown intervention type {0:?}")]
    UnknownInterventionType(String),
    #[error("human count {0} outside {MIN_HUMANS}..={MAX_HUMANS}")]
    HumanCountOutOfRange(usize),
}

/// Single-pass `{name}` substitution. Substituted values are never scanned
/// again, so braces inside them survive verbatim.
pub fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after
            .find('}')
            .and_then(|close| vars.iter().find(|(k, _)| *k == &after[..close]).map(|(_, v)| (close, v)));
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_stage1_prompt(r: &SourceRecord) -> Result<String, GenerationError> {
    if r.title.trim().is_empty() {
        return Err(GenerationError::InvalidSeed { id: r.id.clone(), field: "title" });
    }
    if r.content.trim().is_empty() {
        return Err(GenerationError::InvalidSeed { id: r.id.clone(), field: "content" });
    }
    Ok(fill_template(STAGE1_TEMPLATE, &[("topic", &r.title), ("background_info", &r.content)]))
}

/// Stage 1 output: what the discussion is about, who is having it, and what
/// kind of help the assistant should give.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub source_id: String,
    pub topic: String,
    pub context: String,
    #[serde(rename = "ai_intervention_type")]
    pub intervention_type: InterventionType,
}

impl Scenario {
    /// Number of sentence-ending marks (`.`, `!`, `?`) followed by whitespace
    /// or end of text.
    pub fn context_sentence_count(&self) -> usize {
        let chars: Vec<char> = self.context.chars().collect();
        chars
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace())
            })
            .count()
    }
}

/// Trim and make sure the context ends with terminal punctuation.
fn normalize_context(context: &str) -> String {
    let c = context.trim();
    if c.ends_with(['.', '!', '?']) {
        c.to_string()
    } else {
        format!("{c}.")
    }
}

/// Byte ranges of balanced `{...}` candidates, in order of their opening brace.
fn object_candidates(text: &str) -> impl Iterator<Item = &str> {
    text.match_indices('{').filter_map(move |(start, _)| {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (off, c) in text[start..].char_indices() {
            if in_str {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_str = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..start + off + 1]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// Pull the scenario object out of a Stage 1 completion, tolerating
/// markdown fences and surrounding prose.
pub fn extract_scenario(completion: &str, source_id: &str) -> Result<Scenario, GenerationError> {
    let obj = object_candidates(completion)
        .find_map(|s| match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .ok_or(GenerationError::NoObjectFound)?;

    let field = |name: &'static str| {
        obj.get(name)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(GenerationError::MissingField(name))
    };
    let topic = field("topic")?;
    let context = field("context")?;
    let kind = field("ai_intervention_type")?;
    let intervention_type =
        kind.parse().map_err(|_| GenerationError::UnknownInterventionType(kind.to_string()))?;

    Ok(Scenario {
        source_id: source_id.to_string(),
        topic: topic.to_string(),
        context: normalize_context(context),
        intervention_type,
    })
}

pub fn render_stage2_prompt(s: &Scenario, human_count: usize) -> Result<String, GenerationError> {
    if !(MIN_HUMANS..=MAX_HUMANS).contains(&human_count) {
        return Err(GenerationError::HumanCountOutOfRange(human_count));
    }
    Ok(fill_template(
        STAGE2_TEMPLATE,
        &[
            ("human_count", &human_count.to_string()),
            ("topic", &s.topic),
            ("context", &s.context),
            ("ai_intervention_type", s.intervention_type.label()),
        ],
    ))
}

/// Uniform draw from the allowed participant range.
pub fn sample_human_count(rng: &mut impl Rng) -> usize {
    rng.random_range(MIN_HUMANS..=MAX_HUMANS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Ask the backend for per-token log-probabilities.
    #[serde(default)]
    pub logprobs: bool,
}

impl ChatRequest {
    pub fn user(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        ChatRequest { messages: vec![ChatMessage::user(prompt)], temperature, max_tokens, seed: None, logprobs: false }
    }

    /// Text of the last user message, or empty.
    pub fn prompt(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == ChatRole::User).map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub usage: Usage,
    /// Accelerator memory reported by the backend, if it reports any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_memory_gb: Option<f64>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed_validation: usize,
    pub retries_used: usize,
    pub rejected_by_filter: usize,
    pub per_intervention_type_counts: BTreeMap<InterventionType, usize>,
}
