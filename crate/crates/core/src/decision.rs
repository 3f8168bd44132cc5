//! SPEAK/SILENT labels and the two decision rules used at inference time.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The token an end-to-end model emits to stay quiet.
pub const SILENT_TOKEN: &str = ">";

/// Default operating point for the classifier policy.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Speak,
    Silent,
}

impl Label {
    pub fn as_bit(self) -> u8 {
        match self {
            Label::Speak => 1,
            Label::Silent => 0,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Label::Silent
        } else {
            Label::Speak
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Speak => "SPEAK",
            Label::Silent => "SILENT",
        })
    }
}

/// End-to-end rule: the first sampled token alone decides. Surrounding
/// whitespace from subword tokenizers is ignored.
pub fn e2e_decision(first_token: &str) -> Label {
    if first_token.trim() == SILENT_TOKEN {
        Label::Silent
    } else {
        Label::Speak
    }
}

/// Classifier rule: speak iff `probability >= threshold`.
pub fn threshold_decision(probability: f64, threshold: f64) -> Label {
    if probability >= threshold {
        Label::Speak
    } else {
        Label::Silent
    }
}

/// Thresholds must lie strictly inside (0, 1).
pub fn valid_threshold(threshold: f64) -> bool {
    threshold > 0.0 && threshold < 1.0
}
