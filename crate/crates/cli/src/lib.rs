//! `medsyn` command-line tool.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 when a batch run's
//! failure rate exceeds its threshold.

pub mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use medsyn_core::batch::{run_batch, BatchConfig, BatchError, BatchSummary};
use medsyn_core::icd10::CodeTable;
use medsyn_core::metrics::{aggregate, AggregateReport, MetricsError, Scorer};
use medsyn_core::orchestrator::{Clock, FrozenClock, OrchestratorError, RunCase, SystemClock, Templates};
use medsyn_core::record_pipeline::{
    build_records, corpus_stats, generate_raw_corpus, generate_synthetic, read_diagnoses, read_notes, read_store,
    sample_test_set, write_rows, write_store, CorpusStats, PipelineError, RawCorpusSpec, SynthConfig,
};
use medsyn_core::rundir::{RunDir, RunDirError, RunManifest};
use medsyn_service::{AppState, ServiceError, ServiceSettings, SessionStore};
use thiserror::Error;

use config::{resolve_backend, BackendFlags, FileConfig, RunConfig, ServeConfig, ENV_ASSISTANT, ENV_PHYSICIAN};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_PARTIAL_FAILURE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("no scored sessions found in {0}")]
    NoScoresFound(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "medsyn", version, about = "Clinical dialogue orchestration and ICD-10 evaluation")]
pub struct Cli {
    /// TOML configuration file with `[run]` and `[serve]` tables.
    #[arg(long, global = true, env = "MEDSYN_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join notes with diagnoses, filter, and write the record store.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic record store (or raw notes/diagnoses files).
    Synth(SynthArgs),
    /// Run one case over a record store into a resumable run directory.
    Run(Box<RunArgs>),
    /// Aggregate run directories into comparison tables.
    Eval(EvalArgs),
    /// Start the session service.
    Serve(Box<ServeArgs>),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long, env = "MEDSYN_NOTES")]
    pub notes: PathBuf,
    #[arg(long, env = "MEDSYN_DIAGNOSES")]
    pub diagnoses: PathBuf,
    #[arg(long, env = "MEDSYN_RECORDS")]
    pub out: PathBuf,
    /// Also write the corpus statistics as JSON.
    #[arg(long)]
    pub stats_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Record store path, or a directory for `--raw`.
    #[arg(long)]
    pub out: PathBuf,
    /// Write unfiltered `notes.csv` and `diagnoses.csv` instead; `n` counts
    /// the valid records.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = 0, requires = "raw")]
    pub deceased: usize,
    #[arg(long, default_value_t = 0, requires = "raw")]
    pub malformed: usize,
    #[arg(long)]
    pub code_table: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct PhysicianFlags {
    /// Scripted physician (JSON script file).
    #[arg(long)]
    pub physician_script: Option<PathBuf>,
    #[arg(long)]
    pub physician_url: Option<String>,
    #[arg(long)]
    pub physician_model: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct AssistantFlags {
    /// Scripted assistant (JSON script file).
    #[arg(long)]
    pub assistant_script: Option<PathBuf>,
    #[arg(long)]
    pub assistant_url: Option<String>,
    #[arg(long)]
    pub assistant_model: Option<String>,
}

impl PhysicianFlags {
    fn backend(&self) -> BackendFlags {
        BackendFlags {
            script: self.physician_script.clone(),
            url: self.physician_url.clone(),
            model: self.physician_model.clone(),
        }
    }
}

impl AssistantFlags {
    fn backend(&self) -> BackendFlags {
        BackendFlags {
            script: self.assistant_script.clone(),
            url: self.assistant_url.clone(),
            model: self.assistant_model.clone(),
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    #[arg(long, env = "MEDSYN_CASE")]
    pub case: Option<RunCase>,
    #[arg(long, env = "MEDSYN_RECORDS")]
    pub records: Option<PathBuf>,
    /// Run directory.
    #[arg(long, env = "MEDSYN_RUN_DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sample_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub max_nudges: Option<usize>,
    #[arg(long, env = "MEDSYN_CONCURRENCY")]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub failure_threshold: Option<f64>,
    #[arg(long, env = "MEDSYN_TEMPLATES")]
    pub templates: Option<PathBuf>,
    /// Code table CSV, or `bundled`.
    #[arg(long, env = "MEDSYN_CODE_TABLE")]
    pub code_table: Option<String>,
    #[arg(long)]
    pub frozen_clock: bool,
    #[command(flatten)]
    pub physician: PhysicianFlags,
    #[command(flatten)]
    pub assistant: AssistantFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Directory for report.csv, report.json and turn_histogram.csv.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct ServeArgs {
    #[arg(long, env = "MEDSYN_RECORDS")]
    pub records: Option<PathBuf>,
    #[arg(long, env = "MEDSYN_ADDR")]
    pub addr: Option<String>,
    #[arg(long, env = "MEDSYN_SESSIONS_DIR")]
    pub sessions_dir: Option<PathBuf>,
    #[arg(long, env = "MEDSYN_RUNS_DIR")]
    pub runs_dir: Option<PathBuf>,
    #[arg(long, env = "MEDSYN_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, env = "MEDSYN_TEMPLATES")]
    pub templates: Option<PathBuf>,
    #[arg(long, env = "MEDSYN_CODE_TABLE")]
    pub code_table: Option<String>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[command(flatten)]
    pub physician: PhysicianFlags,
    #[command(flatten)]
    pub assistant: AssistantFlags,
}

fn env_lookup(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    path.map(FileConfig::load).transpose().map(Option::unwrap_or_default)
}

fn load_code_table(spec: Option<&str>) -> Result<Option<CodeTable>, CliError> {
    match spec {
        None => Ok(None),
        Some("bundled") => Ok(Some(CodeTable::bundled_sample())),
        Some(path) => CodeTable::from_path(path).map(Some).map_err(|e| CliError::Validation(format!("{path}: {e}"))),
    }
}

fn load_templates(dir: Option<&Path>) -> Result<Templates, CliError> {
    let t = match dir {
        Some(d) => Templates::from_dir(d)?,
        None => Templates::builtin(),
    };
    t.validate()?;
    Ok(t)
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<CorpusStats, CliError> {
    let notes = read_notes(&args.notes)?;
    let diagnoses = read_diagnoses(&args.diagnoses)?;
    let report = build_records(&notes, &diagnoses);
    if report.records.is_empty() {
        return Err(PipelineError::EmptyCorpus.into());
    }
    for (kind, n) in report.drop_counts() {
        tracing::info!(kind, n, "records dropped");
    }
    tracing::info!(non_icd10 = report.non_icd10_rows, invalid = report.invalid_code_rows, "diagnosis rows skipped");
    write_store(&args.out, &report.records)?;
    let stats = corpus_stats(&report.records)?;
    if let Some(path) = &args.stats_json {
        let json = serde_json::to_vec_pretty(&stats).expect("stats serialize");
        std::fs::write(path, json).map_err(|e| CliError::io(path, e))?;
    }
    Ok(stats)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let table = load_code_table(args.code_table.as_deref())?.unwrap_or_else(CodeTable::bundled_sample);
    if args.raw {
        let spec = RawCorpusSpec::new(args.n, args.deceased, args.malformed);
        let (notes, diagnoses) = generate_raw_corpus(args.seed, &spec, &table);
        std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
        write_rows(args.out.join("notes.csv"), &notes)?;
        write_rows(args.out.join("diagnoses.csv"), &diagnoses)?;
    } else {
        let records = generate_synthetic(args.seed, args.n, &table, &SynthConfig::default());
        write_store(&args.out, &records)?;
    }
    Ok(())
}

/// Merges file configuration, environment and flags.
pub fn resolve_run_config(file: Option<RunConfig>, args: &RunArgs) -> Result<RunConfig, CliError> {
    let file_given = file.is_some();
    let mut cfg = file.unwrap_or_default();
    let physician_base = (file_given || !args.physician.backend().is_set()).then(|| cfg.physician.clone());
    cfg.physician = resolve_backend(physician_base, &args.physician.backend(), ENV_PHYSICIAN, env_lookup)?
        .unwrap_or_default();
    cfg.assistant = resolve_backend(cfg.assistant.take(), &args.assistant.backend(), ENV_ASSISTANT, env_lookup)?;
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        };
    }
    flag!(case);
    flag!(records);
    flag!(out);
    flag!(seed);
    flag!(max_turns);
    flag!(max_nudges);
    flag!(concurrency);
    flag!(failure_threshold);
    if args.sample_n.is_some() {
        cfg.sample_n = args.sample_n;
    }
    if args.templates.is_some() {
        cfg.templates = args.templates.clone();
    }
    if args.code_table.is_some() {
        cfg.code_table = args.code_table.clone();
    }
    cfg.frozen_clock |= args.frozen_clock;
    if !(0.0..=1.0).contains(&cfg.failure_threshold) {
        return Err(CliError::Validation(format!("failure threshold {} is outside [0, 1]", cfg.failure_threshold)));
    }
    Ok(cfg)
}

/// Executes a batch run and returns its summary.
pub async fn cmd_run(cfg: &RunConfig) -> Result<BatchSummary, CliError> {
    let physician = cfg.physician.factory().map_err(|e| CliError::Validation(e.to_string()))?;
    let assistant = cfg
        .assistant
        .as_ref()
        .map(|a| a.factory())
        .transpose()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    medsyn_core::batch::validate(cfg.case, assistant.as_ref(), cfg.concurrency)?;
    let templates = load_templates(cfg.templates.as_deref())?;
    let code_table = load_code_table(cfg.code_table.as_deref())?;

    if !cfg.records.exists() {
        return Err(CliError::Validation(format!("record store {} does not exist", cfg.records.display())));
    }
    let mut records = read_store(&cfg.records)?;
    if let Some(n) = cfg.sample_n {
        records = sample_test_set(&records, n, cfg.seed)?;
    }
    let run_id = cfg
        .out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Validation(format!("bad run directory {}", cfg.out.display())))?;
    let manifest = RunManifest {
        run_id,
        tool_version: format!("medsyn {}", env!("CARGO_PKG_VERSION")),
        case: cfg.case,
        physician_model: physician.model_id().to_string(),
        assistant_model: assistant.as_ref().map(|a| a.model_id().to_string()),
        config: serde_json::to_value(cfg).expect("config serializes"),
        template_hashes: templates.hashes(),
        record_source: Some(cfg.records.display().to_string()),
        record_count: records.len(),
        started_at: chrono::Utc::now(),
        finished_at: None,
    };
    let mut dir = RunDir::create_or_resume(&cfg.out, manifest)?;
    let scorer = match &code_table {
        Some(t) => Scorer::default().with_codes(t),
        None => Scorer::default(),
    };
    let batch = BatchConfig { case: cfg.case, dialogue: cfg.dialogue(), concurrency: cfg.concurrency };
    let system_clock = SystemClock::default();
    let clock: &dyn Clock = if cfg.frozen_clock { &FrozenClock } else { &system_clock };
    let summary =
        run_batch(&records, &physician, assistant.as_ref(), &templates, &scorer, &batch, &mut dir, clock).await?;
    dir.mark_finished(chrono::Utc::now())?;
    Ok(summary)
}

/// Aggregates every scored session in `run_dirs` and writes the report
/// files to `out`.
pub fn cmd_eval(run_dirs: &[PathBuf], out: &Path) -> Result<AggregateReport, CliError> {
    let mut results = Vec::new();
    for d in run_dirs {
        results.extend(RunDir::open(d)?.results()?);
    }
    if results.is_empty() {
        let names: Vec<String> = run_dirs.iter().map(|d| d.display().to_string()).collect();
        return Err(CliError::NoScoresFound(names.join(", ")));
    }
    let report = aggregate(&results)?;
    report.write_dir(out)?;
    Ok(report)
}

pub fn resolve_serve_config(file: Option<ServeConfig>, args: &ServeArgs) -> Result<ServeConfig, CliError> {
    let file_given = file.is_some();
    let mut cfg = file.unwrap_or_default();
    let assistant_base = (file_given || !args.assistant.backend().is_set()).then(|| cfg.assistant.clone());
    cfg.assistant = resolve_backend(assistant_base, &args.assistant.backend(), ENV_ASSISTANT, env_lookup)?
        .unwrap_or_default();
    cfg.physician = resolve_backend(cfg.physician.take(), &args.physician.backend(), ENV_PHYSICIAN, env_lookup)?;
    if let Some(v) = &args.records {
        cfg.records = v.clone();
    }
    if let Some(v) = &args.addr {
        cfg.addr = v.clone();
    }
    if let Some(v) = args.max_turns {
        cfg.max_turns = v;
    }
    for (dst, src) in [
        (&mut cfg.sessions_dir, &args.sessions_dir),
        (&mut cfg.runs_dir, &args.runs_dir),
        (&mut cfg.static_dir, &args.static_dir),
        (&mut cfg.templates, &args.templates),
    ] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    if args.code_table.is_some() {
        cfg.code_table = args.code_table.clone();
    }
    Ok(cfg)
}

/// Loads everything the service needs; fails before binding when the
/// record store or any other input is unusable.
pub fn build_service(cfg: &ServeConfig) -> Result<(Arc<AppState>, SocketAddr), CliError> {
    let addr: SocketAddr =
        cfg.addr.parse().map_err(|e| CliError::Validation(format!("bind address `{}`: {e}", cfg.addr)))?;
    if !cfg.records.is_file() {
        return Err(CliError::Validation(format!("record store {} does not exist", cfg.records.display())));
    }
    let records = read_store(&cfg.records)?;
    let assistant = cfg.assistant.factory().map_err(|e| CliError::Validation(e.to_string()))?;
    let physician = cfg
        .physician
        .as_ref()
        .map(|p| p.factory())
        .transpose()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let store = match &cfg.sessions_dir {
        Some(d) => SessionStore::open(d).map_err(|e| CliError::io(d, e))?,
        None => SessionStore::in_memory(),
    };
    let settings = ServiceSettings { dialogue: cfg.dialogue(), runs_dir: cfg.runs_dir.clone() };
    let state = AppState::new(
        records,
        load_code_table(cfg.code_table.as_deref())?,
        load_templates(cfg.templates.as_deref())?,
        assistant,
        physician,
        settings,
        store,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((Arc::new(state), addr))
}

/// Runs a parsed command line and returns the process exit code.
pub async fn run(cli: Cli) -> Result<u8, CliError> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(args) => {
            println!("{}", cmd_preprocess(&args)?);
            Ok(EXIT_OK)
        }
        Command::Synth(args) => {
            cmd_synth(&args)?;
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let cfg = resolve_run_config(file.run, &args)?;
            let summary = cmd_run(&cfg).await?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            let rate = summary.failure_rate();
            if rate > cfg.failure_threshold {
                eprintln!("failure rate {rate:.3} exceeds threshold {}", cfg.failure_threshold);
                return Ok(EXIT_PARTIAL_FAILURE);
            }
            Ok(EXIT_OK)
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args.run_dirs, &args.out)?;
            print!("{report}");
            Ok(EXIT_OK)
        }
        Command::Serve(args) => {
            let cfg = resolve_serve_config(file.serve, &args)?;
            let (state, addr) = build_service(&cfg)?;
            medsyn_service::serve(state, addr, cfg.static_dir.clone())
                .await
                .map_err(|e| CliError::io(Path::new(&cfg.addr), e))?;
            Ok(EXIT_OK)
        }
    }
}
