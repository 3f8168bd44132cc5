use serde::{Deserialize, Serialize};

use super::{expand_turns, TrainingError};
use crate::decision::Label;
use crate::transcript::{Discussion, Turn};

/// Default character budget for classifier contexts.
pub const DEFAULT_CONTEXT_CHARS: usize = 4_000;

/// Human turns as `Speaker: text` lines, newest last. Assistant turns are
/// dropped. Oldest turns are cut first once the budget is exceeded; the newest
/// turn is always kept.
pub fn render_classifier_context(turns: &[Turn], budget_chars: usize) -> String {
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0usize;
    for turn in turns.iter().rev().filter(|t| !t.is_ai()) {
        let line = turn.line();
        let cost = line.chars().count() + usize::from(!kept.is_empty());
        if !kept.is_empty() && used + cost > budget_chars {
            break;
        }
        used += cost;
        kept.push(line);
    }
    kept.reverse();
    kept.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierExample {
    pub discussion_id: String,
    pub turn_index: usize,
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierSet {
    pub examples: Vec<ClassifierExample>,
    pub n_speak: usize,
    pub n_silent: usize,
}

impl ClassifierSet {
    /// Fraction of SPEAK examples; zero for an empty set.
    pub fn balance(&self) -> f64 {
        let total = self.n_speak + self.n_silent;
        if total == 0 {
            0.0
        } else {
            self.n_speak as f64 / total as f64
        }
    }
}

pub fn build_classifier_examples(
    ds: &[(String, Discussion)],
    include_post: bool,
    budget_chars: usize,
) -> Result<ClassifierSet, TrainingError> {
    let mut set = ClassifierSet::default();
    for (id, d) in ds {
        for ex in expand_turns(d, id, include_post)? {
            match ex.label {
                Label::Speak => set.n_speak += 1,
                Label::Silent => set.n_silent += 1,
            }
            set.examples.push(ClassifierExample {
                discussion_id: ex.discussion_id,
                turn_index: ex.turn_index,
                text: render_classifier_context(&ex.context, budget_chars),
                label: ex.label.as_bit(),
            });
        }
    }
    Ok(set)
}

/// Context before the intervention and the intervention itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPair {
    pub discussion_id: String,
    pub context: Vec<Turn>,
    pub response: String,
}

pub fn build_generator_pairs(ds: &[(String, Discussion)]) -> Result<Vec<GeneratorPair>, TrainingError> {
    ds.iter()
        .map(|(id, d)| {
            let ai = d.intervention_index().ok_or(TrainingError::NoIntervention)?;
            Ok(GeneratorPair {
                discussion_id: id.clone(),
                context: d.turns[..ai].to_vec(),
                response: d.turns[ai].text.clone(),
            })
        })
        .collect()
}
