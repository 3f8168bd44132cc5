use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::decision::Label;
use crate::transcript::{Discussion, Turn};

/// A conversation prefix and what the assistant should do right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionExample {
    pub discussion_id: String,
    /// Number of turns in `context`; the decision sits before turn `turn_index`.
    pub turn_index: usize,
    pub context: Vec<Turn>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

/// One decision point after every human turn that has a successor.
///
/// The boundary right before the intervention is SPEAK with the intervention
/// text as response; the other boundaries are SILENT. Boundaries after the
/// intervention are emitted only with `include_post_intervention`.
pub fn expand_turns(
    d: &Discussion,
    discussion_id: &str,
    include_post_intervention: bool,
) -> Result<Vec<DecisionExample>, TrainingError> {
    let ai = d.intervention_index().ok_or(TrainingError::NoIntervention)?;
    let mut out = Vec::new();
    for k in 0..d.turns.len().saturating_sub(1) {
        if d.turns[k].is_ai() {
            continue;
        }
        let next = &d.turns[k + 1];
        let (label, response) = if next.is_ai() {
            (Label::Speak, Some(next.text.clone()))
        } else if k > ai && !include_post_intervention {
            continue;
        } else {
            (Label::Silent, None)
        };
        out.push(DecisionExample {
            discussion_id: discussion_id.to_string(),
            turn_index: k + 1,
            context: d.turns[..=k].to_vec(),
            label,
            response,
        });
    }
    Ok(out)
}
