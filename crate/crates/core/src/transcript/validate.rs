use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    contains_control_tag, parse_transcript, split_speaker_line, Discussion, Role, TranscriptError, MAX_HUMANS,
    MIN_HUMANS, NEXUS,
};

/// Stable codes for every structural problem a transcript can have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    MissingTag,
    DuplicateAiBlock,
    OrphanLine,
    MalformedSpeakerLine,
    UnexpectedTag,
    EmptyAiBlock,
    EmptyDiscussion,
    NoIntervention,
    MultipleInterventions,
    AiPositionFirst,
    AiPositionLast,
    SpeakerCountOutOfRange,
    TooFewTurns,
    AiSpeakerNotNexus,
    ReservedSpeakerName,
    InvalidSpeakerName,
    EmptyText,
    ControlTagInText,
    ControlTagInSetup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport { ok: violations.is_empty(), violations }
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?}: {}", v.code, v.message)?;
        }
        Ok(())
    }
}

impl From<&TranscriptError> for Violation {
    fn from(err: &TranscriptError) -> Self {
        let code = match err {
            TranscriptError::MissingTag { .. } => ViolationCode::MissingTag,
            TranscriptError::DuplicateAiBlock { .. } => ViolationCode::DuplicateAiBlock,
            TranscriptError::OrphanLine { .. } => ViolationCode::OrphanLine,
            TranscriptError::MalformedSpeakerLine { .. } => ViolationCode::MalformedSpeakerLine,
            TranscriptError::UnexpectedTag { .. } => ViolationCode::UnexpectedTag,
            TranscriptError::EmptyAiBlock { .. } => ViolationCode::EmptyAiBlock,
            TranscriptError::EmptyDiscussion => ViolationCode::EmptyDiscussion,
            TranscriptError::InvariantViolation(r) => {
                return r.violations.first().cloned().unwrap_or(Violation {
                    code: ViolationCode::EmptyDiscussion,
                    message: err.to_string(),
                    line: None,
                })
            }
        };
        Violation { code, message: err.to_string(), line: err.line() }
    }
}

fn speaker_is_representable(name: &str) -> bool {
    name == name.trim()
        && !name.contains(['\n', '\r'])
        && split_speaker_line(&format!("{name}: x")) == Some((name, "x"))
}

/// Check every discussion and turn invariant, reporting all violations.
pub fn validate(d: &Discussion) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Violation { code, message, line: None });

    if d.turns.is_empty() {
        push(ViolationCode::EmptyDiscussion, "discussion has no turns".into());
        return ValidationReport::from_violations(out);
    }
    if d.turns.len() < 3 {
        push(ViolationCode::TooFewTurns, format!("{} turns, need at least 3", d.turns.len()));
    }

    let ai = d.ai_turn_indices();
    match ai.as_slice() {
        [] => push(ViolationCode::NoIntervention, "no assistant turn".into()),
        [i] => {
            if *i == 0 {
                push(ViolationCode::AiPositionFirst, "intervention is the first turn".into());
            }
            if *i == d.turns.len() - 1 {
                push(ViolationCode::AiPositionLast, "intervention is the last turn".into());
            }
        }
        many => push(ViolationCode::MultipleInterventions, format!("{} assistant turns", many.len())),
    }

    let humans = d.human_speakers().len();
    if !(MIN_HUMANS..=MAX_HUMANS).contains(&humans) {
        push(
            ViolationCode::SpeakerCountOutOfRange,
            format!("{humans} distinct human speakers, expected {MIN_HUMANS}-{MAX_HUMANS}"),
        );
    }

    for (i, turn) in d.turns.iter().enumerate() {
        if !speaker_is_representable(&turn.speaker) {
            push(ViolationCode::InvalidSpeakerName, format!("turn {i}: speaker {:?} is not a valid name", turn.speaker));
        }
        if turn.text.trim().is_empty() {
            push(ViolationCode::EmptyText, format!("turn {i}: empty utterance"));
        }
        if contains_control_tag(&turn.text) {
            push(ViolationCode::ControlTagInText, format!("turn {i}: utterance contains a control tag"));
        }
        match turn.role {
            Role::Ai if turn.speaker != NEXUS => push(
                ViolationCode::AiSpeakerNotNexus,
                format!("turn {i}: assistant turn spoken by {:?}", turn.speaker),
            ),
            Role::Human if turn.speaker.eq_ignore_ascii_case(NEXUS) => {
                push(ViolationCode::ReservedSpeakerName, format!("turn {i}: human turn uses the reserved name"))
            }
            _ => {}
        }
    }

    if d.scenario_setup.as_deref().is_some_and(contains_control_tag) {
        push(ViolationCode::ControlTagInSetup, "scenario setup contains a control tag".into());
    }

    ValidationReport::from_violations(out)
}

/// Parse and validate raw text. Parse failures become a single violation.
pub fn validate_transcript(raw: &str) -> (Option<Discussion>, ValidationReport) {
    match parse_transcript(raw) {
        Ok(d) => {
            let report = validate(&d);
            (Some(d), report)
        }
        Err(e) => (None, ValidationReport::from_violations(vec![Violation::from(&e)])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIG_EXAMPLE;
    use crate::transcript::Turn;

    fn codes(d: &Discussion) -> Vec<ViolationCode> {
        validate(d).codes()
    }

    #[test]
    fn figure_example_is_clean() {
        let (d, report) = validate_transcript(FIG_EXAMPLE);
        assert!(d.is_some());
        assert!(report.ok, "{report}");
        assert!(report.violations.is_empty());
    }

    #[test]
    fn ai_last() {
        let d = Discussion::new(vec![Turn::human("A", "x"), Turn::human("B", "y"), Turn::nexus("z")]);
        assert_eq!(codes(&d), [ViolationCode::AiPositionLast]);
    }

    #[test]
    fn seven_speakers() {
        let mut turns: Vec<Turn> = ["A", "B", "C", "D", "E", "F"].iter().map(|n| Turn::human(*n, "hi")).collect();
        turns.push(Turn::nexus("fact"));
        turns.push(Turn::human("G", "thanks"));
        assert_eq!(codes(&Discussion::new(turns)), [ViolationCode::SpeakerCountOutOfRange]);
    }

    #[test]
    fn human_named_nexus_is_reserved() {
        let d = Discussion::new(vec![
            Turn::human("A", "x"),
            Turn::nexus("fact"),
            Turn::human("B", "y"),
            Turn::human("nexus", "sneaky"),
        ]);
        assert_eq!(codes(&d), [ViolationCode::ReservedSpeakerName]);
    }

    #[test]
    fn turn_level_checks() {
        let d = Discussion {
            scenario_setup: Some("[DISCUSSION_START]".into()),
            turns: vec![
                Turn::human("A:B", "x"),
                Turn { speaker: "Bot".into(), role: Role::Ai, text: "y".into() },
                Turn::human("C", "  "),
                Turn::human("D", "see [AI_APPEARED]"),
            ],
            source_scenario: None,
        };
        let c = codes(&d);
        for want in [
            ViolationCode::InvalidSpeakerName,
            ViolationCode::AiSpeakerNotNexus,
            ViolationCode::EmptyText,
            ViolationCode::ControlTagInText,
            ViolationCode::ControlTagInSetup,
        ] {
            assert!(c.contains(&want), "missing {want:?} in {c:?}");
        }
    }

    #[test]
    fn accepts_iff_single_interior_intervention() {
        let base = vec![Turn::human("A", "x"), Turn::human("B", "y"), Turn::human("A", "z")];
        for pos in 0..=base.len() {
            let mut turns = base.clone();
            turns.insert(pos, Turn::nexus("n"));
            let ok = validate(&Discussion::new(turns)).ok;
            assert_eq!(ok, pos > 0 && pos < base.len(), "position {pos}");
        }
        let mut two = base.clone();
        two.insert(1, Turn::nexus("n"));
        two.insert(3, Turn::nexus("m"));
        assert_eq!(codes(&Discussion::new(two)), [ViolationCode::MultipleInterventions]);
    }

    #[test]
    fn parse_errors_become_violations() {
        let (d, r) = validate_transcript("[DISCUSSION_START]\nA: x\n");
        assert!(d.is_none());
        assert_eq!(r.codes(), [ViolationCode::MissingTag]);
        assert!(!r.ok);
    }
}
