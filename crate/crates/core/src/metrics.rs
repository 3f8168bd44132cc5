//! Interruption accuracy, response perplexity, latency summaries, and the
//! comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no ground-truth silent turns")]
    NoSilentTurns,
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("sample {0} has no tokens")]
    EmptyIntervention(usize),
    #[error("no samples")]
    NoSamples,
}

/// What a policy decided at one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub discussion_id: String,
    pub turn_index: usize,
    pub predicted: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_latency_ms: Option<f64>,
    /// Only present when `predicted` is SPEAK.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_logprobs: Option<Vec<f64>>,
}

/// Percentage of ground-truth SILENT turns predicted SILENT. SPEAK-labeled
/// turns do not enter the denominator.
pub fn interruption_accuracy(preds: &[Label], labels: &[Label]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    let (hits, total) = preds
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Silent)
        .fold((0usize, 0usize), |(h, t), (p, _)| (h + usize::from(*p == Label::Silent), t + 1));
    if total == 0 {
        return Err(MetricError::NoSilentTurns);
    }
    Ok(100.0 * hits as f64 / total as f64)
}

/// Percentage of ground-truth SPEAK turns predicted SPEAK. `None` when there
/// are none.
pub fn speak_recall(preds: &[Label], labels: &[Label]) -> Option<f64> {
    let (hits, total) = preds
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Speak)
        .fold((0usize, 0usize), |(h, t), (p, _)| (h + usize::from(*p == Label::Speak), t + 1));
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    /// Token-weighted over all samples.
    pub aggregate: f64,
    pub per_sample: Vec<f64>,
}

impl Perplexity {
    pub fn mean_of_samples(&self) -> f64 {
        self.per_sample.iter().sum::<f64>() / self.per_sample.len() as f64
    }
}

/// `exp(-(sum of all log-probs) / total tokens)` plus per-sample values.
pub fn response_perplexity(samples: &[Vec<f64>]) -> Result<Perplexity, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::NoSamples);
    }
    if let Some(i) = samples.iter().position(Vec::is_empty) {
        return Err(MetricError::EmptyIntervention(i));
    }
    let total: f64 = samples.iter().flatten().sum();
    let count: usize = samples.iter().map(Vec::len).sum();
    let per_sample = samples.iter().map(|s| (-s.iter().sum::<f64>() / s.len() as f64).exp()).collect();
    Ok(Perplexity { aggregate: (-total / count as f64).exp(), per_sample })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles. All zeros for an empty slice.
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        if samples_ms.is_empty() {
            return Self::default();
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            let idx = (q * sorted.len() as f64).ceil() as usize;
            sorted[idx.clamp(1, sorted.len()) - 1]
        };
        LatencyStats { mean: sorted.iter().sum::<f64>() / sorted.len() as f64, p50: rank(0.50), p95: rank(0.95) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub interruption_accuracy: Option<f64>,
    pub response_perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_perplexity_mean_of_samples: Option<f64>,
    pub latency_ms_per_turn: LatencyStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_ms_mean: Option<f64>,
    pub gpu_memory_gb: Option<f64>,
    pub n_silent_turns: usize,
    pub n_speak_turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speak_recall: Option<f64>,
    #[serde(default)]
    pub errors: usize,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Markdown table with one column per policy.
pub fn render_report(reports: &[(String, MetricsReport)]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("Interruption Accuracy (%)".into(), reports.iter().map(|(_, r)| cell(r.interruption_accuracy)).collect()),
        ("Response Perplexity".into(), reports.iter().map(|(_, r)| cell(r.response_perplexity)).collect()),
        ("Latency (ms/turn)".into(), reports.iter().map(|(_, r)| format!("{:.2}", r.latency_ms_per_turn.mean)).collect()),
        ("GPU Memory (GB)".into(), reports.iter().map(|(_, r)| cell(r.gpu_memory_gb)).collect()),
    ];
    let has_recall = reports.iter().any(|(_, r)| r.speak_recall.is_some());
    if has_recall {
        rows.push(("Speak Recall (%) *".into(), reports.iter().map(|(_, r)| cell(r.speak_recall)).collect()));
    }

    let header: Vec<String> = std::iter::once("Metric".to_string()).chain(reports.iter().map(|(n, _)| n.clone())).collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for (label, cells) in &rows {
        widths[0] = widths[0].max(label.chars().count());
        for (i, c) in cells.iter().enumerate() {
            widths[i + 1] = widths[i + 1].max(c.chars().count());
        }
    }
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));

    let mut out = String::new();
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header.iter().zip(&widths).map(|(h, w)| pad(h, *w)).collect()));
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect()));
    for (label, cells) in &rows {
        let mut all = vec![pad(label, widths[0])];
        all.extend(cells.iter().enumerate().map(|(i, c)| pad(c, widths[i + 1])));
        out.push_str(&line(all));
    }
    if has_recall {
        let _ = writeln!(out, "\n* supplementary metric: share of SPEAK turns where the policy spoke.");
    }
    out
}
