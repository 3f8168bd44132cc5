//! Per-turn latency benchmark through the live session path.

use std::fmt::Write as _;
use std::sync::Arc;

use discuss_core::decision::Label;
use discuss_core::metrics::LatencyStats;
use discuss_core::transcript::Discussion;
use serde::{Deserialize, Serialize};

use crate::clock::{millis, Clock};
use crate::policy::{PolicyConfig, PolicyFactory};
use crate::session::{SessionError, SessionStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub methodology: String,
    pub sessions: usize,
    pub turns: usize,
    pub speak_decisions: usize,
    pub errors: usize,
    /// Time inside the policy's decide call.
    pub decision_latency: LatencyStats,
    /// Whole `post_turn` call, intervention generation included.
    pub post_turn_latency: LatencyStats,
    /// `post_turn` minus decision and generation time.
    pub service_overhead: LatencyStats,
    pub generation_ms_mean: Option<f64>,
}

/// Replay the human turns of each discussion, in order, into fresh in-memory
/// sessions and time every turn. Recorded assistant turns are not replayed;
/// the policy produces its own.
pub async fn bench_policy(
    factory: Arc<dyn PolicyFactory>,
    cfg: PolicyConfig,
    replay: &[Discussion],
    clock: Arc<dyn Clock>,
) -> Result<BenchReport, SessionError> {
    let store = SessionStore::in_memory(factory, clock.clone());
    let (mut decision, mut total, mut overhead, mut gen) = (vec![], vec![], vec![], vec![]);
    let (mut speak, mut errors) = (0, 0);
    for d in replay {
        let id = store.create_session(cfg.clone())?;
        for t in d.turns.iter().filter(|t| !t.is_ai()) {
            let start = clock.now();
            let r = store.post_turn(&id, &t.speaker, &t.text).await?;
            let wall = millis(clock.now().saturating_sub(start));
            let g = r.intervention.as_ref().map_or(0.0, |i| i.generation_ms);
            if r.intervention.is_some() {
                gen.push(g);
            }
            speak += usize::from(r.decision.decision == Label::Speak);
            errors += usize::from(r.decision.error.is_some());
            decision.push(r.decision.latency_ms);
            overhead.push((wall - r.decision.latency_ms - g).max(0.0));
            total.push(wall);
        }
        store.close_session(&id).await?;
    }
    let methodology = format!(
        "{} discussions replayed sequentially, human turns only, {:?} policy, {:?} ingest; \
         one fresh in-memory session per discussion; times from a monotonic clock around each call",
        replay.len(),
        cfg.kind,
        cfg.mode
    );
    Ok(BenchReport {
        methodology,
        sessions: replay.len(),
        turns: total.len(),
        speak_decisions: speak,
        errors,
        decision_latency: LatencyStats::from_samples(&decision),
        post_turn_latency: LatencyStats::from_samples(&total),
        service_overhead: LatencyStats::from_samples(&overhead),
        generation_ms_mean: (!gen.is_empty()).then(|| gen.iter().sum::<f64>() / gen.len() as f64),
    })
}

pub fn render_bench(r: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Latency benchmark\n");
    let _ = writeln!(s, "Method: {}.\n", r.methodology);
    let _ = writeln!(
        s,
        "Sessions: {}, turns: {}, SPEAK decisions: {}, errors: {}\n",
        r.sessions, r.turns, r.speak_decisions, r.errors
    );
    let _ = writeln!(s, "| Latency (ms/turn) | mean | p50 | p95 |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for (name, l) in [
        ("decision", r.decision_latency),
        ("post_turn", r.post_turn_latency),
        ("service overhead", r.service_overhead),
    ] {
        let _ = writeln!(s, "| {name} | {:.3} | {:.3} | {:.3} |", l.mean, l.p50, l.p95);
    }
    if let Some(g) = r.generation_ms_mean {
        let _ = writeln!(s, "\nMean generation time: {g:.3} ms");
    }
    s
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;
    use std::time::Duration;

    use super::*;
    use crate::backend::mock::e2e_chat;
    use crate::clock::ManualClock;
    use crate::policy::StaticPolicyFactory;
    use discuss_core::fixtures::random_discussion;

    #[tokio::test]
    async fn virtual_clock_latency_is_exact() {
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
        let tok = Arc::new(Mutex::new(">".to_string()));
        let chat = Arc::new(e2e_chat(clock.clone(), tok, "x", Duration::from_millis(30)));
        let factory = Arc::new(StaticPolicyFactory { chat, classifier: None });
        let replay: Vec<_> = (0..5).map(random_discussion).collect();
        let r = bench_policy(factory, PolicyConfig::end_to_end(), &replay, clock).await.unwrap();
        assert_eq!(r.decision_latency.mean, 30.0);
        assert_eq!(r.service_overhead.mean, 0.0);
        assert_eq!(r.turns, replay.iter().map(|d| d.turns.len() - 1).sum::<usize>());
        assert!(render_bench(&r).contains("| decision | 30.000 |"));
    }
}
