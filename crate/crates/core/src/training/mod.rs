//! Supervision targets for the two architectures: per-turn decision examples,
//! masked end-to-end sequences, classifier examples, generator pairs, and the
//! corresponding loss evaluators over model-supplied log-probabilities.

mod classifier;
mod expand;
mod loss;
mod mask;
mod split;
mod tokenizer;

use thiserror::Error;

pub use classifier::{
    build_classifier_examples, build_generator_pairs, render_classifier_context, ClassifierExample, ClassifierSet,
    GeneratorPair, DEFAULT_CONTEXT_CHARS,
};
pub use expand::{expand_turns, DecisionExample};
pub use loss::{eval_bce, eval_bce_total, eval_e2e_loss, eval_generator_loss, BCE_EPS};
pub use mask::{build_e2e_mask, build_e2e_mask_with, render_e2e_prefix, render_e2e_sequence, E2eLayout, MaskedTokenSequence};
pub use split::{split_dataset, train_group_count};
pub use tokenizer::{BasicTokenizer, Token, TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error("discussion does not contain exactly one intervention")]
    NoIntervention,
    #[error("tokenization failed: {0}")]
    Tokenization(String),
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("mask selects no tokens")]
    EmptyMask,
    #[error("{logprobs} log-probabilities for a mask of length {mask}")]
    LengthMismatch { logprobs: usize, mask: usize },
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
}
