//! Canonical tagged discussion transcripts.
//!
//! A transcript is UTF-8 text with LF line endings. Control tags sit alone on
//! their own line:
//!
//! ```text
//! [SCENARIO_SETUP]
//! ...opaque setup text...
//! [/SCENARIO_SETUP]
//! [DISCUSSION_START]
//! John: Dialogue text...
//! Emily: Dialogue text that creates the trigger...
//! [AI_APPEARED]
//! Nexus: The intervention.
//! [/AI_DISAPPEARED]
//! John: Reaction...
//! [/DISCUSSION_END]
//! ```

mod normalize;
mod parse;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use normalize::normalize_headers;
pub use parse::{parse_transcript, split_speaker_line};
pub use validate::{validate, validate_transcript, ValidationReport, Violation, ViolationCode};

/// Display name reserved for the assistant.
pub const NEXUS: &str = "Nexus";

/// Longest accepted speaker name, in characters.
pub const MAX_SPEAKER_CHARS: usize = 40;
/// Most whitespace-separated words a speaker name may have.
pub const MAX_SPEAKER_WORDS: usize = 4;

/// Inclusive bounds on distinct human speakers in a discussion.
pub const MIN_HUMANS: usize = 2;
pub const MAX_HUMANS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    SetupOpen,
    SetupClose,
    DiscussionStart,
    DiscussionEnd,
    AiOpen,
    AiClose,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::SetupOpen,
        Tag::SetupClose,
        Tag::DiscussionStart,
        Tag::DiscussionEnd,
        Tag::AiOpen,
        Tag::AiClose,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            Tag::SetupOpen => "[SCENARIO_SETUP]",
            Tag::SetupClose => "[/SCENARIO_SETUP]",
            Tag::DiscussionStart => "[DISCUSSION_START]",
            Tag::DiscussionEnd => "[/DISCUSSION_END]",
            Tag::AiOpen => "[AI_APPEARED]",
            Tag::AiClose => "[/AI_DISAPPEARED]",
        }
    }

    /// Exact match of an already trimmed line against the canonical tags.
    pub fn from_line(line: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == line)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True if `text` mentions any control tag anywhere.
pub fn contains_control_tag(text: &str) -> bool {
    Tag::ALL.iter().any(|t| text.contains(t.as_str()))
}

/// The five kinds of assistant intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InterventionType {
    FactualCorrection,
    ConceptDefinition,
    DataProvision,
    SourceIdentification,
    SynthesisReframing,
}

impl InterventionType {
    pub const ALL: [InterventionType; 5] = [
        InterventionType::FactualCorrection,
        InterventionType::ConceptDefinition,
        InterventionType::DataProvision,
        InterventionType::SourceIdentification,
        InterventionType::SynthesisReframing,
    ];

    /// Human-readable label, as used in prompts and the scenarios index.
    pub const fn label(self) -> &'static str {
        match self {
            InterventionType::FactualCorrection => "Factual Correction",
            InterventionType::ConceptDefinition => "Concept Definition",
            InterventionType::DataProvision => "Data Provision",
            InterventionType::SourceIdentification => "Source Identification",
            InterventionType::SynthesisReframing => "Synthesis & Reframing",
        }
    }

    fn key(s: &str) -> String {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty() && !w.eq_ignore_ascii_case("and"))
            .map(str::to_lowercase)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown intervention type {0:?}")]
pub struct UnknownInterventionType(pub String);

impl FromStr for InterventionType {
    type Err = UnknownInterventionType;

    /// Case- and punctuation-insensitive; "&" and "and" are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = Self::key(s);
        Self::ALL
            .into_iter()
            .find(|t| Self::key(t.label()) == key)
            .ok_or_else(|| UnknownInterventionType(s.to_string()))
    }
}

impl fmt::Display for InterventionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for InterventionType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for InterventionType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    #[serde(rename = "ai")]
    Ai,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn human(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn { speaker: speaker.into(), role: Role::Human, text: text.into() }
    }

    pub fn nexus(text: impl Into<String>) -> Self {
        Turn { speaker: NEXUS.to_string(), role: Role::Ai, text: text.into() }
    }

    pub fn is_ai(&self) -> bool {
        self.role == Role::Ai
    }

    /// `Speaker: text` with the text's whitespace collapsed.
    pub fn line(&self) -> String {
        format!("{}: {}", self.speaker, collapse_whitespace(&self.text))
    }
}

/// A multi-party discussion with (when valid) exactly one assistant turn.
///
/// Equality compares the setup and the turns after collapsing whitespace in
/// free text. `source_scenario` is bookkeeping carried outside the transcript
/// format and does not take part in equality.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Discussion {
    pub scenario_setup: Option<String>,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_scenario: Option<String>,
}

impl PartialEq for Discussion {
    fn eq(&self, other: &Self) -> bool {
        let setup = |d: &Discussion| d.scenario_setup.as_deref().map(collapse_whitespace);
        setup(self) == setup(other)
            && self.turns.len() == other.turns.len()
            && self.turns.iter().zip(&other.turns).all(|(a, b)| {
                a.speaker == b.speaker
                    && a.role == b.role
                    && collapse_whitespace(&a.text) == collapse_whitespace(&b.text)
            })
    }
}

impl Discussion {
    pub fn new(turns: Vec<Turn>) -> Self {
        Discussion { scenario_setup: None, turns, source_scenario: None }
    }

    pub fn ai_turn_indices(&self) -> Vec<usize> {
        self.turns.iter().enumerate().filter(|(_, t)| t.is_ai()).map(|(i, _)| i).collect()
    }

    /// Index of the intervention, if there is exactly one.
    pub fn intervention_index(&self) -> Option<usize> {
        match self.ai_turn_indices().as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    pub fn human_speakers(&self) -> BTreeSet<&str> {
        self.turns.iter().filter(|t| !t.is_ai()).map(|t| t.speaker.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptError {
    #[error("missing required tag {tag}")]
    MissingTag { tag: Tag, line: Option<usize> },
    #[error("more than one {} block (line {line})", Tag::AiOpen)]
    DuplicateAiBlock { line: usize },
    #[error("text before the first speaker line (line {line})")]
    OrphanLine { line: usize },
    #[error("malformed speaker line {line}: {reason}")]
    MalformedSpeakerLine { line: usize, reason: String },
    #[error("unexpected tag {tag} at line {line}")]
    UnexpectedTag { tag: Tag, line: usize },
    #[error("empty intervention block at line {line}")]
    EmptyAiBlock { line: usize },
    #[error("discussion has no turns")]
    EmptyDiscussion,
    #[error("discussion violates invariants: {0}")]
    InvariantViolation(ValidationReport),
}

impl TranscriptError {
    pub fn line(&self) -> Option<usize> {
        match self {
            TranscriptError::MissingTag { line, .. } => *line,
            TranscriptError::DuplicateAiBlock { line }
            | TranscriptError::OrphanLine { line }
            | TranscriptError::MalformedSpeakerLine { line, .. }
            | TranscriptError::UnexpectedTag { line, .. }
            | TranscriptError::EmptyAiBlock { line } => Some(*line),
            TranscriptError::EmptyDiscussion | TranscriptError::InvariantViolation(_) => None,
        }
    }
}

/// Render a valid discussion in the canonical transcript format.
pub fn serialize_transcript(d: &Discussion) -> Result<String, TranscriptError> {
    let report = validate(d);
    if !report.ok {
        return Err(TranscriptError::InvariantViolation(report));
    }
    Ok(render_unchecked(d))
}

/// Same layout as [`serialize_transcript`] without the invariant gate. Used for
/// exporting live sessions that may hold zero or several interventions.
pub fn render_unchecked(d: &Discussion) -> String {
    let mut out = String::new();
    if let Some(setup) = &d.scenario_setup {
        out.push_str(Tag::SetupOpen.as_str());
        out.push('\n');
        let setup = setup.trim();
        if !setup.is_empty() {
            for line in setup.lines() {
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
        out.push_str(Tag::SetupClose.as_str());
        out.push('\n');
    }
    out.push_str(Tag::DiscussionStart.as_str());
    out.push('\n');
    for turn in &d.turns {
        if turn.is_ai() {
            out.push_str(Tag::AiOpen.as_str());
            out.push('\n');
            out.push_str(&turn.line());
            out.push('\n');
            out.push_str(Tag::AiClose.as_str());
            out.push('\n');
        } else {
            out.push_str(&turn.line());
            out.push('\n');
        }
    }
    out.push_str(Tag::DiscussionEnd.as_str());
    out.push('\n');
    out
}

/// Collapse every whitespace run to one space and trim the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervention_type_parsing_is_lenient() {
        assert_eq!("Factual Correction".parse(), Ok(InterventionType::FactualCorrection));
        assert_eq!("factual_correction".parse(), Ok(InterventionType::FactualCorrection));
        assert_eq!("Synthesis and Reframing".parse(), Ok(InterventionType::SynthesisReframing));
        assert_eq!("SYNTHESIS & REFRAMING".parse(), Ok(InterventionType::SynthesisReframing));
        assert_eq!("SynthesisReframing".parse(), Ok(InterventionType::SynthesisReframing));
        assert!("Debate Moderation".parse::<InterventionType>().is_err());
        assert!("".parse::<InterventionType>().is_err());
    }

    #[test]
    fn intervention_type_serde_uses_labels() {
        let json = serde_json::to_string(&InterventionType::SynthesisReframing).unwrap();
        assert_eq!(json, "\"Synthesis & Reframing\"");
        let back: InterventionType = serde_json::from_str("\"data provision\"").unwrap();
        assert_eq!(back, InterventionType::DataProvision);
    }

    #[test]
    fn minimal_discussion_serializes_to_seven_lines() {
        let d = Discussion::new(vec![
            Turn::human("Ann", "Is the sky green?"),
            Turn::nexus("It is usually blue."),
            Turn::human("Bob", "Thanks."),
        ]);
        let text = serialize_transcript(&d).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            [
                "[DISCUSSION_START]",
                "Ann: Is the sky green?",
                "[AI_APPEARED]",
                "Nexus: It is usually blue.",
                "[/AI_DISAPPEARED]",
                "Bob: Thanks.",
                "[/DISCUSSION_END]",
            ]
        );
        assert!(text.ends_with('\n'));
        assert_eq!(parse_transcript(&text).unwrap(), d);
    }

    #[test]
    fn serialize_rejects_invalid() {
        let d = Discussion::new(vec![Turn::human("Ann", "hi"), Turn::human("Bob", "yo"), Turn::human("Ann", "ok")]);
        match serialize_transcript(&d) {
            Err(TranscriptError::InvariantViolation(r)) => {
                assert!(r.has(ViolationCode::NoIntervention));
            }
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn equality_ignores_whitespace_and_source() {
        let mut a = Discussion::new(vec![Turn::human("Ann", "a  b\n c")]);
        let b = Discussion::new(vec![Turn::human("Ann", " a b c ")]);
        a.source_scenario = Some("x".into());
        assert_eq!(a, b);
    }
}
