//! Two-stage synthetic discussion generation.
//!
//! Seed records are filtered and deduplicated, turned into scenarios, and
//! the scenarios into validated transcripts. Every record draws its
//! randomness from an RNG keyed by `(seed, record id)`, and results are
//! committed in input order, so a run is reproducible regardless of worker
//! count. Per-record outcomes are appended to `checkpoint.jsonl`; a rerun over
//! the same output directory skips records that already have an outcome.

use std::collections::{HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use discuss_core::corpus::{filter_record, Dedup, FilterConfig, SourceRecord};
use discuss_core::generation::{
    extract_scenario, render_stage1_prompt, render_stage2_prompt, sample_human_count, ChatRequest, GenerationError,
    PipelineStats, Scenario,
};
use discuss_core::transcript::{
    normalize_headers, serialize_transcript, validate_transcript, Discussion, InterventionType, ValidationReport,
};
use futures::{stream, StreamExt};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend};
use crate::io::{append_jsonl, read_jsonl, safe_file_stem, write_atomic};

pub const SCENARIOS_FILE: &str = "scenarios.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    /// Extra attempts per stage after the first one fails validation.
    pub max_retries: usize,
    pub temperature: f64,
    pub stage1_max_tokens: u32,
    pub stage2_max_tokens: u32,
    pub filter: FilterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 4,
            max_retries: 2,
            temperature: 0.8,
            stage1_max_tokens: 512,
            stage2_max_tokens: 2048,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no valid output after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: usize, last: String, report: Option<ValidationReport> },
    #[error(transparent)]
    Prompt(#[from] GenerationError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-record RNG, independent of processing order.
pub fn record_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::stable_hash(&[&seed.to_le_bytes(), id.as_bytes()]))
}

fn request(prompt: String, temperature: f64, max_tokens: u32, rng: &mut ChaCha8Rng) -> ChatRequest {
    let mut req = ChatRequest::user(prompt, temperature, max_tokens);
    req.seed = Some(rng.next_u64());
    req
}

/// Stage 1. Returns the scenario and the number of retries it took.
pub async fn generate_scenario(
    record: &SourceRecord,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Scenario, usize), PipelineError> {
    let prompt = render_stage1_prompt(record)?;
    let mut last = None;
    for attempt in 0..=cfg.max_retries {
        let resp = backend.complete(&request(prompt.clone(), cfg.temperature, cfg.stage1_max_tokens, rng)).await?;
        match extract_scenario(&resp.text, &record.id) {
            Ok(s) => return Ok((s, attempt)),
            Err(e) => {
                tracing::debug!(id = %record.id, attempt, error = %e, "scenario extraction failed");
                last = Some(e);
            }
        }
    }
    Err(PipelineError::ExhaustedRetries {
        attempts: cfg.max_retries + 1,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
        report: None,
    })
}

/// Stage 2. Each attempt draws a fresh participant count. Output is header-
/// normalized, parsed and validated before it is accepted.
pub async fn generate_discussion(
    scenario: &Scenario,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Discussion, usize), PipelineError> {
    let mut last = None;
    for attempt in 0..=cfg.max_retries {
        let prompt = render_stage2_prompt(scenario, sample_human_count(rng))?;
        let resp = backend.complete(&request(prompt, cfg.temperature, cfg.stage2_max_tokens, rng)).await?;
        let (d, report) = validate_transcript(&normalize_headers(&resp.text));
        match d {
            Some(mut d) if report.ok => {
                d.source_scenario = Some(scenario.source_id.clone());
                return Ok((d, attempt));
            }
            _ => {
                tracing::debug!(id = %scenario.source_id, attempt, %report, "transcript rejected");
                last = Some(report);
            }
        }
    }
    let report = last.unwrap_or_default();
    Err(PipelineError::ExhaustedRetries { attempts: cfg.max_retries + 1, last: report.to_string(), report: Some(report) })
}

/// Outcome line in `checkpoint.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub source_id: String,
    pub succeeded: bool,
    pub retries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention_type: Option<InterventionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Records that pass the filter, in order, minus duplicate content or ids.
/// Also returns how many were dropped.
pub fn select_records(records: Vec<SourceRecord>, filter: &FilterConfig) -> (Vec<SourceRecord>, usize) {
    let mut dedup = Dedup::new();
    let mut ids = HashSet::new();
    let mut rejected = 0;
    let mut kept = Vec::new();
    for r in records {
        if filter_record(&r, filter).accepted && dedup.first_sighting(&r) && ids.insert(r.id.clone()) {
            kept.push(r);
        } else {
            rejected += 1;
        }
    }
    (kept, rejected)
}

struct Success {
    scenario: Scenario,
    discussion: Discussion,
    retries: usize,
}

struct Failure {
    scenario: Option<Scenario>,
    retries: usize,
    error: String,
}

async fn process_record(
    record: &SourceRecord,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
) -> Result<Result<Success, Failure>, PipelineError> {
    let mut rng = record_rng(cfg.seed, &record.id);
    let (scenario, r1) = match generate_scenario(record, backend, cfg, &mut rng).await {
        Ok(v) => v,
        Err(PipelineError::ExhaustedRetries { attempts, last, .. }) => {
            return Ok(Err(Failure { scenario: None, retries: attempts - 1, error: last }))
        }
        Err(e) => return Err(e),
    };
    match generate_discussion(&scenario, backend, cfg, &mut rng).await {
        Ok((discussion, r2)) => Ok(Ok(Success { scenario, discussion, retries: r1 + r2 })),
        Err(PipelineError::ExhaustedRetries { attempts, last, .. }) => {
            Ok(Err(Failure { scenario: Some(scenario), retries: r1 + attempts - 1, error: last }))
        }
        Err(e) => Err(e),
    }
}

pub fn transcript_path(out_dir: &Path, source_id: &str) -> PathBuf {
    out_dir.join(format!("{}.txt", safe_file_stem(source_id)))
}

fn tally(stats: &mut PipelineStats, e: &CheckpointEntry) {
    stats.attempted += 1;
    stats.retries_used += e.retries;
    if e.succeeded {
        stats.succeeded += 1;
        if let Some(t) = e.intervention_type {
            *stats.per_intervention_type_counts.entry(t).or_default() += 1;
        }
    } else {
        stats.failed_validation += 1;
    }
}

/// Full run: records JSONL in, one transcript file per success out, plus
/// `scenarios.jsonl`, `checkpoint.jsonl` and `stats.json`.
///
/// Validation failures are counted and skipped. Backend and I/O errors abort
/// the run; everything committed before the error stays checkpointed.
pub async fn run_pipeline(
    records_path: &Path,
    out_dir: &Path,
    backend: Arc<dyn ChatBackend>,
    cfg: &PipelineConfig,
) -> Result<PipelineStats, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let (records, rejected) = select_records(read_jsonl(records_path)?, &cfg.filter);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut stats = PipelineStats { rejected_by_filter: rejected, ..Default::default() };
    let mut done = HashMap::new();
    if checkpoint.exists() {
        for e in read_jsonl::<CheckpointEntry>(&checkpoint)? {
            tally(&mut stats, &e);
            done.insert(e.source_id.clone(), e);
        }
    }
    let todo: Vec<SourceRecord> = records.into_iter().filter(|r| !done.contains_key(&r.id)).collect();
    tracing::info!(pending = todo.len(), resumed = done.len(), rejected, "pipeline starting");

    let mut results = stream::iter(todo.into_iter().map(|r| {
        let backend = backend.clone();
        async move {
            let out = process_record(&r, &*backend, cfg).await;
            (r, out)
        }
    }))
    .buffered(cfg.workers.max(1));

    while let Some((record, out)) = results.next().await {
        let entry = match out? {
            Ok(s) => {
                let text = serialize_transcript(&s.discussion)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
                write_atomic(&transcript_path(out_dir, &record.id), text.as_bytes())?;
                append_jsonl(&out_dir.join(SCENARIOS_FILE), &s.scenario)?;
                CheckpointEntry {
                    source_id: record.id,
                    succeeded: true,
                    retries: s.retries,
                    intervention_type: Some(s.scenario.intervention_type),
                    error: None,
                }
            }
            Err(f) => {
                if let Some(s) = &f.scenario {
                    append_jsonl(&out_dir.join(SCENARIOS_FILE), s)?;
                }
                tracing::warn!(id = %record.id, error = %f.error, "record failed validation");
                CheckpointEntry {
                    source_id: record.id,
                    succeeded: false,
                    retries: f.retries,
                    intervention_type: None,
                    error: Some(f.error),
                }
            }
        };
        append_jsonl(&checkpoint, &entry)?;
        tally(&mut stats, &entry);
    }
    write_atomic(&out_dir.join(STATS_FILE), serde_json::to_string_pretty(&stats).map_err(io::Error::from)?.as_bytes())?;
    Ok(stats)
}

/// Stage 1 only: filtered records to scenarios.
pub async fn run_scenarios(
    records: Vec<SourceRecord>,
    backend: Arc<dyn ChatBackend>,
    cfg: &PipelineConfig,
) -> Result<(Vec<Scenario>, PipelineStats), PipelineError> {
    let (records, rejected) = select_records(records, &cfg.filter);
    let mut stats = PipelineStats { rejected_by_filter: rejected, ..Default::default() };
    let mut out = Vec::new();
    let mut results = stream::iter(records.iter().map(|r| {
        let backend = backend.clone();
        async move { generate_scenario(r, &*backend, cfg, &mut record_rng(cfg.seed, &r.id)).await }
    }))
    .buffered(cfg.workers.max(1));
    while let Some(res) = results.next().await {
        stats.attempted += 1;
        match res {
            Ok((s, retries)) => {
                stats.succeeded += 1;
                stats.retries_used += retries;
                *stats.per_intervention_type_counts.entry(s.intervention_type).or_default() += 1;
                out.push(s);
            }
            Err(PipelineError::ExhaustedRetries { attempts, .. }) => {
                stats.failed_validation += 1;
                stats.retries_used += attempts - 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, stats))
}

/// Stage 2 only: scenarios to transcript files in `out_dir`.
pub async fn run_discussions(
    scenarios: Vec<Scenario>,
    out_dir: &Path,
    backend: Arc<dyn ChatBackend>,
    cfg: &PipelineConfig,
) -> Result<PipelineStats, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut stats = PipelineStats::default();
    let mut results = stream::iter(scenarios.iter().map(|s| {
        let backend = backend.clone();
        // offset the stream so stage 2 draws differ from a stage 1 run on the same id
        async move { generate_discussion(s, &*backend, cfg, &mut record_rng(cfg.seed ^ 0x5eed, &s.source_id)).await }
    }))
    .buffered(cfg.workers.max(1));
    let mut i = 0;
    while let Some(res) = results.next().await {
        let s = &scenarios[i];
        i += 1;
        stats.attempted += 1;
        match res {
            Ok((d, retries)) => {
                stats.succeeded += 1;
                stats.retries_used += retries;
                *stats.per_intervention_type_counts.entry(s.intervention_type).or_default() += 1;
                let text =
                    serialize_transcript(&d).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
                write_atomic(&transcript_path(out_dir, &s.source_id), text.as_bytes())?;
            }
            Err(PipelineError::ExhaustedRetries { attempts, .. }) => {
                stats.failed_validation += 1;
                stats.retries_used += attempts - 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(stats)
}

/// Re-validate every `.txt` transcript under `dir`, sorted by path.
pub fn validate_dir(dir: &Path) -> io::Result<Vec<(PathBuf, ValidationReport)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let raw = std::fs::read_to_string(&p)?;
            Ok((p, validate_transcript(&raw).1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{ScriptedChat, SyntheticGenerator};
    use discuss_core::fixtures::FIG_EXAMPLE;

    fn scenario() -> Scenario {
        Scenario {
            source_id: "s1".into(),
            topic: "Why is 911 the emergency number?".into(),
            context: "Friends at a diner.".into(),
            intervention_type: InterventionType::FactualCorrection,
        }
    }

    #[tokio::test]
    async fn discussion_retries_until_valid() {
        let chat = ScriptedChat::texts(["not a transcript", FIG_EXAMPLE]);
        let cfg = PipelineConfig::default();
        let (d, retries) = generate_discussion(&scenario(), &chat, &cfg, &mut record_rng(1, "s1")).await.unwrap();
        assert_eq!(retries, 1);
        assert_eq!(d.source_scenario.as_deref(), Some("s1"));
        assert_eq!(chat.requests().len(), 2);
        // each attempt carries its own seed
        let seeds: HashSet<_> = chat.requests().iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 2);
    }

    #[tokio::test]
    async fn decorated_headers_are_repaired() {
        let decorated = FIG_EXAMPLE.replace("[DISCUSSION_START]", "**[DISCUSSION_START]**");
        let chat = ScriptedChat::texts([format!("```\n{decorated}```")]);
        let cfg = PipelineConfig { max_retries: 0, ..Default::default() };
        assert!(generate_discussion(&scenario(), &chat, &cfg, &mut record_rng(1, "s1")).await.is_ok());
    }

    #[tokio::test]
    async fn exhausted_retries_carry_the_report() {
        let chat = ScriptedChat::texts(["x", "y", "z"]);
        let cfg = PipelineConfig::default();
        match generate_discussion(&scenario(), &chat, &cfg, &mut record_rng(1, "s1")).await {
            Err(PipelineError::ExhaustedRetries { attempts: 3, report: Some(r), .. }) => assert!(!r.ok),
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn backend_errors_abort() {
        let chat = ScriptedChat::new([Err(BackendError::Transport("down".into()))]);
        let cfg = PipelineConfig::default();
        let r = generate_discussion(&scenario(), &chat, &cfg, &mut record_rng(1, "s1")).await;
        assert!(matches!(r, Err(PipelineError::Backend(_))));
    }

    #[test]
    fn selection_drops_duplicates_and_short_records() {
        let long = "a fairly long background description that easily clears fifty chars";
        let recs = vec![
            SourceRecord { id: "1".into(), title: "A sufficiently long title".into(), content: long.into() },
            SourceRecord { id: "2".into(), title: "a  sufficiently long TITLE".into(), content: long.into() },
            SourceRecord { id: "1".into(), title: "Another long enough title".into(), content: long.into() },
            SourceRecord { id: "3".into(), title: "short".into(), content: long.into() },
        ];
        let (kept, rejected) = select_records(recs, &FilterConfig::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(rejected, 3);
    }

    #[tokio::test]
    async fn stage_runs_compose() {
        let recs: Vec<SourceRecord> = (0..5)
            .map(|i| SourceRecord {
                id: format!("r{i}"),
                title: format!("Question number {i} about something?"),
                content: "Background that is long enough to pass the content length filter.".into(),
            })
            .collect();
        let backend: Arc<dyn ChatBackend> = Arc::new(SyntheticGenerator::new());
        let cfg = PipelineConfig { workers: 2, ..Default::default() };
        let (scenarios, s1) = run_scenarios(recs, backend.clone(), &cfg).await.unwrap();
        assert_eq!(s1.succeeded, 5);
        let dir = tempfile::tempdir().unwrap();
        let s2 = run_discussions(scenarios, dir.path(), backend, &cfg).await.unwrap();
        assert_eq!(s2.succeeded, 5);
        assert!(validate_dir(dir.path()).unwrap().iter().all(|(_, r)| r.ok));
    }
}
