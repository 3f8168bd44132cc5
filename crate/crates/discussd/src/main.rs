use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use discuss_core::corpus::{filter_record, FilterConfig, SourceRecord};
use discuss_core::generation::Scenario;
use discuss_core::training::{
    build_classifier_examples, build_e2e_mask_with, build_generator_pairs, expand_turns, render_e2e_sequence,
    split_dataset, BasicTokenizer, DecisionExample, MaskedTokenSequence, DEFAULT_CONTEXT_CHARS,
};
use discuss_core::transcript::{validate_transcript, Discussion};
use discussd::backend::mock::{demo_chat, demo_classifier, SyntheticGenerator};
use discussd::backend::{ChatBackend, OpenAiClient, ENV_BACKEND_URL};
use discussd::bench::{bench_policy, render_bench};
use discussd::clock::{Clock, SystemClock};
use discussd::eval::{run_eval, write_report, EvalOptions};
use discussd::io::{read_jsonl, write_atomic, write_jsonl};
use discussd::pipeline::{run_discussions, run_pipeline, run_scenarios, validate_dir, PipelineConfig};
use discussd::policy::{HttpPolicyFactory, IngestMode, PolicyConfig, PolicyFactory, PolicyKind, StaticPolicyFactory};
use discussd::session::SessionStore;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "discussd", version, about = "Synthetic group-discussion data and a proactive discussion assistant")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter and deduplicate seed records.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Stage 1: seed records to scenarios.
    Scenarios {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Stage 2: scenarios to transcript files.
    Discussions {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Both stages with checkpointing; rerun to resume.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Validate transcript files or directories of them.
    Validate { paths: Vec<PathBuf> },
    /// Build training targets from a directory of transcripts.
    Expand {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also emit decision points after the intervention.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        include_post: bool,
        #[arg(long, default_value_t = DEFAULT_CONTEXT_CHARS)]
        context_chars: usize,
    },
    /// Grouped, seeded train/test split of a JSONL file.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Field holding the group id.
        #[arg(long, default_value = "discussion_id")]
        key: String,
    },
    /// Replay labeled decision points through one or more policies.
    Eval {
        /// `decisions.jsonl` from `expand`, usually the test side of `split`.
        #[arg(long, alias = "test")]
        examples: PathBuf,
        #[arg(long = "policy", value_enum, required = true)]
        policies: Vec<PolicyArg>,
        #[arg(long, default_value = "report.md")]
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Run the HTTP/SSE session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        /// Offline demo backends instead of HTTP endpoints.
        #[arg(long)]
        mock: bool,
    },
    /// Per-turn latency through the session path.
    Bench {
        #[arg(long, value_enum)]
        policy: PolicyArg,
        /// Directory of transcripts to replay.
        #[arg(long)]
        replay: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Strict)]
        mode: ModeArg,
        #[command(flatten)]
        policy_args: PolicyArgs,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value_t = discuss_core::corpus::DEFAULT_MIN_TITLE_CHARS)]
    min_title_chars: usize,
    #[arg(long, default_value_t = discuss_core::corpus::DEFAULT_MIN_CONTENT_CHARS)]
    min_content_chars: usize,
    /// Additional URL regexes (case-insensitive).
    #[arg(long = "url-pattern")]
    url_patterns: Vec<String>,
}

impl FilterArgs {
    fn config(&self) -> Result<FilterConfig> {
        let extra: Vec<&str> = self.url_patterns.iter().map(String::as_str).collect();
        Ok(FilterConfig::new(self.min_title_chars, self.min_content_chars, &extra)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Offline deterministic generator.
    Mock,
    /// OpenAI-compatible endpoint from DISCUSSD_BACKEND_URL.
    Http,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    max_retries: usize,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, value_enum, default_value_t = BackendArg::Http)]
    backend: BackendArg,
    #[command(flatten)]
    filter: FilterArgs,
}

impl GenArgs {
    fn config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            seed: self.seed,
            workers: self.workers,
            max_retries: self.max_retries,
            temperature: self.temperature,
            filter: self.filter.config()?,
            ..Default::default()
        })
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        Ok(match self.backend {
            BackendArg::Mock => Arc::new(SyntheticGenerator::new()),
            BackendArg::Http => {
                Arc::new(OpenAiClient::from_env().with_context(|| format!("{ENV_BACKEND_URL} is not set"))?)
            }
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    EndToEnd,
    Decoupled,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Lenient,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    classifier_url: Option<String>,
    /// Offline demo backends with this artificial delay per call.
    #[arg(long)]
    mock_delay_ms: Option<u64>,
}

impl PolicyArgs {
    fn config(&self, kind: PolicyArg, mode: IngestMode) -> PolicyConfig {
        PolicyConfig {
            kind: match kind {
                PolicyArg::EndToEnd => PolicyKind::EndToEnd,
                PolicyArg::Decoupled => PolicyKind::Decoupled,
            },
            threshold: if kind == PolicyArg::Decoupled { self.threshold } else { None },
            backend_url: self.backend_url.clone(),
            classifier_url: self.classifier_url.clone(),
            mode,
        }
    }

    fn factory(&self, clock: Arc<dyn Clock>) -> Arc<dyn PolicyFactory> {
        match self.mock_delay_ms {
            Some(ms) => mock_factory(clock, Duration::from_millis(ms)),
            None => Arc::new(HttpPolicyFactory::from_env()),
        }
    }
}

fn mock_factory(clock: Arc<dyn Clock>, delay: Duration) -> Arc<dyn PolicyFactory> {
    Arc::new(StaticPolicyFactory {
        chat: Arc::new(demo_chat(clock.clone(), delay)),
        classifier: Some(Arc::new(demo_classifier(clock, delay))),
    })
}

/// Transcripts under `dir`, keyed by file stem, sorted.
fn load_transcripts(dir: &Path) -> Result<Vec<(String, Discussion)>> {
    let mut out = Vec::new();
    for (path, report) in validate_dir(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !report.ok {
            tracing::warn!(path = %path.display(), %report, "skipping invalid transcript");
            continue;
        }
        let raw = std::fs::read_to_string(&path)?;
        if let (Some(d), _) = validate_transcript(&raw) {
            out.push((stem, d));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct E2eRecord<'a> {
    discussion_id: &'a str,
    text: String,
    #[serde(flatten)]
    sequence: MaskedTokenSequence,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Filter { input, output, filter } => {
            let cfg = filter.config()?;
            let records: Vec<SourceRecord> = read_jsonl(&input)?;
            let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
            for r in &records {
                if let Some(reason) = filter_record(r, &cfg).reject_reason {
                    *reasons.entry(format!("{reason:?}")).or_default() += 1;
                }
            }
            let (kept, rejected) = discussd::pipeline::select_records(records, &cfg);
            write_jsonl(&output, &kept)?;
            let dupes = rejected - reasons.values().sum::<usize>();
            if dupes > 0 {
                reasons.insert("Duplicate".into(), dupes);
            }
            print_json(&serde_json::json!({ "kept": kept.len(), "rejected": rejected, "reasons": reasons }))?;
        }
        Cmd::Scenarios { input, output, gen } => {
            let (scenarios, stats) = run_scenarios(read_jsonl(&input)?, gen.backend()?, &gen.config()?).await?;
            write_jsonl(&output, &scenarios)?;
            print_json(&stats)?;
        }
        Cmd::Discussions { input, out_dir, gen } => {
            let scenarios: Vec<Scenario> = read_jsonl(&input)?;
            print_json(&run_discussions(scenarios, &out_dir, gen.backend()?, &gen.config()?).await?)?;
        }
        Cmd::Pipeline { input, out_dir, gen } => {
            print_json(&run_pipeline(&input, &out_dir, gen.backend()?, &gen.config()?).await?)?;
        }
        Cmd::Validate { paths } => {
            let mut bad = 0;
            for p in paths {
                let reports = if p.is_dir() {
                    validate_dir(&p)?
                } else {
                    vec![(p.clone(), validate_transcript(&std::fs::read_to_string(&p)?).1)]
                };
                for (path, r) in reports {
                    if r.ok {
                        println!("ok      {}", path.display());
                    } else {
                        bad += 1;
                        println!("INVALID {}\n{r}", path.display());
                    }
                }
            }
            return Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Cmd::Expand { input_dir, out_dir, include_post, context_chars } => {
            let ds = load_transcripts(&input_dir)?;
            std::fs::create_dir_all(&out_dir)?;
            let mut decisions: Vec<DecisionExample> = Vec::new();
            let tok = BasicTokenizer::new();
            let mut e2e = Vec::new();
            for (id, d) in &ds {
                decisions.extend(expand_turns(d, id, include_post)?);
                e2e.push(E2eRecord {
                    discussion_id: id,
                    text: render_e2e_sequence(&d.turns, include_post).text,
                    sequence: build_e2e_mask_with(d, &tok, include_post)?,
                });
            }
            let classifier = build_classifier_examples(&ds, include_post, context_chars)?;
            write_jsonl(&out_dir.join("decisions.jsonl"), &decisions)?;
            write_jsonl(&out_dir.join("e2e.jsonl"), &e2e)?;
            write_jsonl(&out_dir.join("generator_pairs.jsonl"), &build_generator_pairs(&ds)?)?;
            write_jsonl(&out_dir.join("classifier.jsonl"), &classifier.examples)?;
            print_json(&serde_json::json!({
                "discussions": ds.len(),
                "decision_points": decisions.len(),
                "classifier_speak": classifier.n_speak,
                "classifier_silent": classifier.n_silent,
                "classifier_balance": classifier.balance(),
            }))?;
        }
        Cmd::Split { input, train, test, ratio, seed, key } => {
            let rows: Vec<serde_json::Value> = read_jsonl(&input)?;
            if let Some(i) = rows.iter().position(|r| !r.get(&key).is_some_and(|v| v.is_string())) {
                bail!("row {} has no string field {key:?}", i + 1);
            }
            let (tr, te) = split_dataset(rows, ratio, seed, |r| r[&key].as_str().unwrap_or_default())?;
            write_jsonl(&train, &tr)?;
            write_jsonl(&test, &te)?;
            print_json(&serde_json::json!({ "train": tr.len(), "test": te.len() }))?;
        }
        Cmd::Eval { examples, policies, report, concurrency, policy } => {
            let examples: Vec<DecisionExample> = read_jsonl(&examples)?;
            let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
            let factory = policy.factory(clock.clone());
            let mut runs = Vec::new();
            for kind in policies {
                let cfg = policy.config(kind, IngestMode::Strict);
                let p = factory.build(&cfg)?;
                let name = match kind {
                    PolicyArg::EndToEnd => "End-to-End".to_string(),
                    PolicyArg::Decoupled => format!("Decoupled (t={})", cfg.validated()?.threshold.unwrap_or_default()),
                };
                let out = run_eval(&examples, &*p, &*clock, EvalOptions { generate_on_speak: true, concurrency }).await;
                runs.push((name, out));
            }
            write_report(&report, &runs)?;
            print!("{}", std::fs::read_to_string(&report)?);
        }
        Cmd::Serve { port, host, data_dir, mock } => {
            let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
            let factory: Arc<dyn PolicyFactory> =
                if mock { mock_factory(clock.clone(), Duration::ZERO) } else { Arc::new(HttpPolicyFactory::from_env()) };
            let store = Arc::new(SessionStore::open(&data_dir, factory, clock)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            discussd::server::serve(store, addr).await?;
        }
        Cmd::Bench { policy, replay, report, mode, policy_args } => {
            let ds: Vec<Discussion> = load_transcripts(&replay)?.into_iter().map(|(_, d)| d).collect();
            if ds.is_empty() {
                bail!("no valid transcripts under {}", replay.display());
            }
            let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
            let mode = match mode {
                ModeArg::Strict => IngestMode::Strict,
                ModeArg::Lenient => IngestMode::Lenient,
            };
            let r = bench_policy(policy_args.factory(clock.clone()), policy_args.config(policy, mode), &ds, clock).await?;
            let text = render_bench(&r);
            if let Some(path) = report {
                write_atomic(&path, text.as_bytes())?;
            }
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "discussd=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
