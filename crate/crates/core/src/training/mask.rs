use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenId, Tokenizer};
use super::TrainingError;
use crate::decision::SILENT_TOKEN;
use crate::transcript::{Discussion, Turn};

/// Token ids plus the loss mask for end-to-end training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTokenSequence {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<u8>,
    pub silent_token_positions: Vec<usize>,
    /// Half-open token index range of the intervention line.
    pub intervention_span: Option<(usize, usize)>,
}

impl MaskedTokenSequence {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().map(|&m| usize::from(m)).sum()
    }
}

/// Rendered training text with the byte positions that carry loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct E2eLayout {
    pub text: String,
    /// Byte range of the `Nexus: ...` line, newline excluded.
    pub intervention: Option<Range<usize>>,
    /// Byte offsets of each silent-token line.
    pub silent_offsets: Vec<usize>,
}

/// One `Speaker: text` line per turn. A silent-token line follows every
/// human turn whose successor is also human; with `include_post` false, only
/// boundaries before the intervention get one.
pub fn render_e2e_sequence(turns: &[Turn], include_post: bool) -> E2eLayout {
    let ai = turns.iter().position(Turn::is_ai);
    let mut text = String::new();
    let mut intervention = None;
    let mut silent_offsets = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        let start = text.len();
        text.push_str(&turn.line());
        if turn.is_ai() && intervention.is_none() {
            intervention = Some(start..text.len());
        }
        text.push('\n');
        let next_is_human = turns.get(i + 1).is_some_and(|n| !n.is_ai());
        let before_ai = ai.is_none_or(|a| i < a);
        if !turn.is_ai() && next_is_human && (include_post || before_ai) {
            silent_offsets.push(text.len());
            text.push_str(SILENT_TOKEN);
            text.push('\n');
        }
    }
    E2eLayout { text, intervention, silent_offsets }
}

/// History as the end-to-end model sees it at inference time: the training
/// layout of every turn so far, ending right after the newest line.
pub fn render_e2e_prefix(turns: &[Turn]) -> String {
    render_e2e_sequence(turns, true).text
}

pub fn build_e2e_mask(d: &Discussion, tok: &dyn Tokenizer) -> Result<MaskedTokenSequence, TrainingError> {
    build_e2e_mask_with(d, tok, true)
}

/// Tokenize the training layout and mark intervention and silent tokens.
pub fn build_e2e_mask_with(
    d: &Discussion,
    tok: &dyn Tokenizer,
    include_post: bool,
) -> Result<MaskedTokenSequence, TrainingError> {
    d.intervention_index().ok_or(TrainingError::NoIntervention)?;
    let layout = render_e2e_sequence(&d.turns, include_post);
    let span = layout.intervention.clone().ok_or(TrainingError::NoIntervention)?;
    let tokens = tok.tokenize(&layout.text)?;
    let silent_id = tok.silent_token_id();

    let mut mask = vec![0u8; tokens.len()];
    let mut silent_positions = Vec::with_capacity(layout.silent_offsets.len());
    let mut first = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.start < span.end && t.end > span.start {
            mask[i] = 1;
            first.get_or_insert(i);
            last = Some(i);
        } else if layout.silent_offsets.binary_search(&t.start).is_ok() {
            if t.id != silent_id || t.end != t.start + SILENT_TOKEN.len() {
                return Err(TrainingError::Tokenization(format!(
                    "silent token at byte {} did not tokenize to a single token",
                    t.start
                )));
            }
            mask[i] = 1;
            silent_positions.push(i);
        }
    }
    if silent_positions.len() != layout.silent_offsets.len() {
        return Err(TrainingError::Tokenization("silent token merged with neighbouring text".into()));
    }
    let intervention_span = match (first, last) {
        (Some(a), Some(b)) => Some((a, b + 1)),
        _ => return Err(TrainingError::Tokenization("intervention produced no tokens".into())),
    };

    Ok(MaskedTokenSequence {
        tokens: tokens.iter().map(|t| t.id).collect(),
        mask,
        silent_token_positions: silent_positions,
        intervention_span,
    })
}
