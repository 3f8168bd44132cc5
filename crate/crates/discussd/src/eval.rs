//! Offline evaluation: replay labeled decision points through a policy.

use std::io;
use std::path::Path;

use discuss_core::decision::Label;
use discuss_core::metrics::{
    interruption_accuracy, render_report, response_perplexity, speak_recall, LatencyStats, MetricsReport, TurnPrediction,
};
use discuss_core::training::DecisionExample;
use futures::{stream, StreamExt};
use serde::{Deserialize, Serialize};

use crate::clock::{millis, Clock};
use crate::io::write_atomic;
use crate::policy::DecisionPolicy;

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Generate an intervention whenever the policy says SPEAK.
    pub generate_on_speak: bool,
    /// Decision points in flight at once. Latencies are only comparable
    /// across runs with the same value.
    pub concurrency: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { generate_on_speak: true, concurrency: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub discussion_id: String,
    pub turn_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<TurnPrediction>,
    pub labels: Vec<Label>,
    pub failures: Vec<EvalFailure>,
}

struct Scored {
    prediction: TurnPrediction,
    label: Label,
    generation_ms: Option<f64>,
    gpu_memory_gb: Option<f64>,
}

async fn score_one(
    ex: &DecisionExample,
    policy: &dyn DecisionPolicy,
    clock: &dyn Clock,
    opts: EvalOptions,
) -> Result<Scored, EvalFailure> {
    let fail = |e: String| EvalFailure { discussion_id: ex.discussion_id.clone(), turn_index: ex.turn_index, error: e };
    let start = clock.now();
    let outcome = policy.decide(&ex.context).await.map_err(|e| fail(e.to_string()))?;
    let latency = millis(clock.now().saturating_sub(start));
    let mut gpu = outcome.gpu_memory_gb;
    let (mut logprobs, mut generation_ms) = (None, None);
    if outcome.decision == Label::Speak && opts.generate_on_speak {
        let start = clock.now();
        let g = policy.generate(&ex.context).await.map_err(|e| fail(e.to_string()))?;
        generation_ms = Some(millis(clock.now().saturating_sub(start)));
        logprobs = g.logprobs;
        gpu = match (gpu, g.gpu_memory_gb) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
    Ok(Scored {
        prediction: TurnPrediction {
            discussion_id: ex.discussion_id.clone(),
            turn_index: ex.turn_index,
            predicted: outcome.decision,
            first_token: outcome.first_token,
            decision_latency_ms: Some(latency),
            response_logprobs: logprobs,
        },
        label: ex.label,
        generation_ms,
        gpu_memory_gb: gpu,
    })
}

/// Run every example through `policy`. Failed decision points are recorded
/// and left out of the metrics.
///
/// Perplexity is computed over generated interventions at points where both
/// the prediction and the ground truth are SPEAK.
pub async fn run_eval(
    examples: &[DecisionExample],
    policy: &dyn DecisionPolicy,
    clock: &dyn Clock,
    opts: EvalOptions,
) -> EvalOutcome {
    let results: Vec<Result<Scored, EvalFailure>> = stream::iter(examples.iter().map(|ex| score_one(ex, policy, clock, opts)))
        .buffered(opts.concurrency.max(1))
        .collect()
        .await;
    let mut scored = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => scored.push(s),
            Err(f) => {
                tracing::warn!(id = %f.discussion_id, turn = f.turn_index, error = %f.error, "evaluation point failed");
                failures.push(f);
            }
        }
    }
    let preds: Vec<Label> = scored.iter().map(|s| s.prediction.predicted).collect();
    let labels: Vec<Label> = scored.iter().map(|s| s.label).collect();
    let samples: Vec<Vec<f64>> = scored
        .iter()
        .filter(|s| s.label == Label::Speak)
        .filter_map(|s| s.prediction.response_logprobs.clone())
        .filter(|l| !l.is_empty())
        .collect();
    let ppl = response_perplexity(&samples).ok();
    let latencies: Vec<f64> = scored.iter().filter_map(|s| s.prediction.decision_latency_ms).collect();
    let gen: Vec<f64> = scored.iter().filter_map(|s| s.generation_ms).collect();
    let report = MetricsReport {
        interruption_accuracy: interruption_accuracy(&preds, &labels).ok(),
        response_perplexity: ppl.as_ref().map(|p| p.aggregate),
        response_perplexity_mean_of_samples: ppl.as_ref().map(|p| p.mean_of_samples()),
        latency_ms_per_turn: LatencyStats::from_samples(&latencies),
        generation_ms_mean: (!gen.is_empty()).then(|| gen.iter().sum::<f64>() / gen.len() as f64),
        gpu_memory_gb: scored.iter().filter_map(|s| s.gpu_memory_gb).reduce(f64::max),
        n_silent_turns: labels.iter().filter(|l| **l == Label::Silent).count(),
        n_speak_turns: labels.iter().filter(|l| **l == Label::Speak).count(),
        speak_recall: speak_recall(&preds, &labels),
        errors: failures.len(),
    };
    EvalOutcome { report, predictions: scored.into_iter().map(|s| s.prediction).collect(), labels, failures }
}

/// Markdown table at `path` plus a JSON sidecar next to it.
pub fn write_report(path: &Path, runs: &[(String, EvalOutcome)]) -> io::Result<()> {
    let table: Vec<(String, MetricsReport)> = runs.iter().map(|(n, o)| (n.clone(), o.report.clone())).collect();
    write_atomic(path, render_report(&table).as_bytes())?;
    let sidecar: serde_json::Map<String, serde_json::Value> =
        runs.iter().map(|(n, o)| (n.clone(), serde_json::to_value(o).unwrap_or_default())).collect();
    write_atomic(&path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::mock::{FixedClassifier, ScriptedChat};
    use crate::backend::BackendError;
    use crate::clock::ManualClock;
    use crate::policy::{DecoupledPolicy, EndToEndPolicy};
    use discuss_core::fixtures::FIG_EXAMPLE;
    use discuss_core::training::expand_turns;
    use discuss_core::transcript::parse_transcript;

    fn fig_examples() -> Vec<DecisionExample> {
        expand_turns(&parse_transcript(FIG_EXAMPLE).unwrap(), "fig", true).unwrap()
    }

    #[tokio::test]
    async fn always_silent_policy() {
        let clock = Arc::new(ManualClock::new());
        let clf = Arc::new(FixedClassifier::new(clock.clone(), 0.1).with_delay(std::time::Duration::from_millis(3)));
        let p = DecoupledPolicy::new(clf, Arc::new(ScriptedChat::texts(Vec::<String>::new())), 0.5);
        let out = run_eval(&fig_examples(), &p, &*clock, EvalOptions::default()).await;
        assert_eq!(out.report.interruption_accuracy, Some(100.0));
        assert_eq!(out.report.speak_recall, Some(0.0));
        assert_eq!(out.report.n_silent_turns, 4);
        assert_eq!(out.report.latency_ms_per_turn.mean, 3.0);
        assert_eq!(out.report.response_perplexity, None);
    }

    #[tokio::test]
    async fn oracle_policy_is_exact_and_repeatable() {
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
        let lp = -(4f64.ln());
        let chat = Arc::new(
            crate::backend::mock::FnChat::new(clock.clone(), move |req| {
                let p = req.prompt();
                if req.max_tokens > 1 {
                    Ok(crate::backend::mock::words_response("Nexus: it was chosen in 1968", lp))
                } else if p.trim_end().lines().last().is_some_and(|l| l.starts_with("Sarah:")) && !p.contains("Nexus:") {
                    Ok(crate::backend::mock::token_response("Nexus", -0.1))
                } else {
                    Ok(crate::backend::mock::token_response(">", -0.1))
                }
            })
            .with_delay(std::time::Duration::from_millis(5)),
        );
        let p = EndToEndPolicy::new(chat);
        let a = run_eval(&fig_examples(), &p, &*clock, EvalOptions::default()).await;
        let b = run_eval(&fig_examples(), &p, &*clock, EvalOptions { concurrency: 3, ..Default::default() }).await;
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.interruption_accuracy, Some(100.0));
        assert_eq!(a.report.speak_recall, Some(100.0));
        assert!((a.report.response_perplexity.unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(a.report.latency_ms_per_turn.mean, 5.0);
        assert_eq!(a.report.generation_ms_mean, Some(5.0));
    }

    #[tokio::test]
    async fn failures_are_counted_not_fatal() {
        let clock = ManualClock::new();
        let chat = Arc::new(ScriptedChat::new([
            Ok(crate::backend::mock::token_response(">", -0.1)),
            Err(BackendError::Transport("x".into())),
        ]));
        let p = EndToEndPolicy::new(chat);
        let out = run_eval(&fig_examples(), &p, &clock, EvalOptions::default()).await;
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.failures.len(), 4);
        assert_eq!(out.report.errors, 4);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.md");
        let outcome = EvalOutcome { report: MetricsReport::default(), predictions: vec![], labels: vec![], failures: vec![] };
        write_report(&path, &[("e2e".into(), outcome)]).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("Interruption Accuracy (%)"));
        assert!(dir.path().join("report.json").exists());
    }
}
