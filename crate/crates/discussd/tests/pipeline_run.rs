use std::fs;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use discuss_core::corpus::SourceRecord;
use discuss_core::generation::{ChatRequest, ChatResponse, PipelineStats};
use discussd::backend::mock::SyntheticGenerator;
use discussd::backend::{BackendError, ChatBackend};
use discussd::io::{read_jsonl, write_jsonl};
use discussd::pipeline::{run_pipeline, validate_dir, CheckpointEntry, PipelineConfig, PipelineError, CHECKPOINT_FILE};

fn records(n: usize) -> Vec<SourceRecord> {
    let mut v: Vec<SourceRecord> = (0..n)
        .map(|i| SourceRecord {
            id: format!("q{i:03}"),
            title: format!("Why does thing number {i} behave that way?"),
            content: format!("Longer background for question {i}, explaining what the asker already tried."),
        })
        .collect();
    v.push(SourceRecord { id: "short".into(), title: "Too short".into(), content: v[0].content.clone() });
    v.push(SourceRecord {
        id: "link".into(),
        title: "A title that is long enough".into(),
        content: "See https://example.com for the long background text here.".into(),
    });
    v.push(SourceRecord { id: "dup".into(), ..v[0].clone() });
    v
}

/// Fails every call after the first `budget` with a transport error.
struct Flaky {
    inner: SyntheticGenerator,
    budget: std::sync::atomic::AtomicUsize,
}

#[async_trait]
impl ChatBackend for Flaky {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        use std::sync::atomic::Ordering;
        if self.budget.load(Ordering::SeqCst) == 0 {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.budget.fetch_sub(1, Ordering::SeqCst);
        self.inner.complete(req).await
    }
}

fn write_records(dir: &Path, n: usize) -> std::path::PathBuf {
    let p = dir.join("records.jsonl");
    write_jsonl(&p, &records(n)).unwrap();
    p
}

#[tokio::test]
async fn full_run_with_rejections_and_retries() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_records(dir.path(), 20);
    let out = dir.path().join("out");
    let backend = Arc::new(SyntheticGenerator { malformed_every: Some(4) });
    let cfg = PipelineConfig { seed: 3, workers: 3, ..Default::default() };
    let stats = run_pipeline(&input, &out, backend, &cfg).await.unwrap();
    assert_eq!(stats.rejected_by_filter, 3);
    assert_eq!(stats.attempted, 20);
    assert!(stats.retries_used > 0, "{stats:?}");
    assert_eq!(stats.succeeded + stats.failed_validation, 20);
    assert!(stats.succeeded + stats.failed_validation <= stats.attempted * (1 + cfg.max_retries));
    assert_eq!(stats.per_intervention_type_counts.values().sum::<usize>(), stats.succeeded);
    let reports = validate_dir(&out).unwrap();
    assert_eq!(reports.len(), stats.succeeded);
    assert!(reports.iter().all(|(_, r)| r.ok));
    let on_disk: PipelineStats = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(on_disk, stats);
}

#[tokio::test]
async fn resume_after_backend_outage() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_records(dir.path(), 12);
    let cfg = PipelineConfig { seed: 11, workers: 1, ..Default::default() };

    let reference = dir.path().join("reference");
    let full = run_pipeline(&input, &reference, Arc::new(SyntheticGenerator::new()), &cfg).await.unwrap();

    let out = dir.path().join("out");
    let flaky = Arc::new(Flaky { inner: SyntheticGenerator::new(), budget: 9.into() });
    let err = run_pipeline(&input, &out, flaky, &cfg).await.unwrap_err();
    assert!(matches!(err, PipelineError::Backend(_)));
    let partial: Vec<CheckpointEntry> = read_jsonl(&out.join(CHECKPOINT_FILE)).unwrap();
    assert!(!partial.is_empty() && partial.len() < 12);

    let resumed = run_pipeline(&input, &out, Arc::new(SyntheticGenerator::new()), &cfg).await.unwrap();
    assert_eq!(resumed, full);
    for (path, _) in validate_dir(&reference).unwrap() {
        let name = path.file_name().unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(out.join(name)).unwrap(), "{name:?}");
    }
}

#[tokio::test]
async fn malformed_input_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("records.jsonl");
    fs::write(&input, "{\"id\":\"a\",\"title\":\"t\",\"content\":\"c\"}\n{oops\n").unwrap();
    let err = run_pipeline(&input, &dir.path().join("out"), Arc::new(SyntheticGenerator::new()), &PipelineConfig::default())
        .await
        .unwrap_err();
    assert!(err.to_string().contains(":2:"), "{err}");
}
