//! `planrag` command line: ingest a corpus, generate plans, run datasets
//! through an execution mode, score records, and benchmark plan shapes.
//!
//! Exit codes: 0 success, 1 partial (some items failed), 2 usage or config error.

pub mod commands;
pub mod config;
pub mod records;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use planrag::executor::{Aggregation, Mode, TagResolution};

pub use config::AppConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "planrag", version, about = "Reasoning-plan orchestration for retrieval-augmented QA")]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk a corpus JSONL ({"id", "text"} per line) into a retrieval store.
    Ingest(IngestArgs),
    /// Generate reasoning plans for a query or a dataset.
    Plan(PlanArgs),
    /// Run every dataset item through an execution mode.
    Run(RunArgs),
    /// Score records against a dataset.
    Eval(EvalArgs),
    /// Latency and context report for a plan shape or for records.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    pub corpus: PathBuf,
    /// Store directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long, conflicts_with = "dataset", required_unless_present_any = ["dataset", "plans"])]
    pub query: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Existing plan lines to summarize instead of planning.
    #[arg(long, conflicts_with_all = ["query", "dataset"])]
    pub plans: Option<PathBuf>,
    /// "http" or a script file.
    #[arg(long, default_value = "http")]
    pub planner: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the depth histogram.
    #[arg(long)]
    pub stats: bool,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Dataset items run concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Answer backend: "http" or a script file.
    #[arg(long, default_value = "http")]
    pub backend: String,
    /// Plan backend; defaults to --backend.
    #[arg(long)]
    pub planner: Option<String>,
    #[arg(long, default_value = "deterministic")]
    pub tag_resolution: TagResolution,
    #[arg(long, default_value = "sink")]
    pub aggregation: Aggregation,
    #[arg(long, default_value = "records.jsonl")]
    pub out: PathBuf,
    /// Keep records already in --out and skip their ids.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub retriever_endpoint: Option<String>,
}

impl RunArgs {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            mode: None,
            k: None,
            max_parallel: None,
            parallel: None,
            backend: "http".into(),
            planner: None,
            tag_resolution: TagResolution::Deterministic,
            aggregation: Aggregation::SinkAnswer,
            out: out.into(),
            resume: false,
            no_cache: true,
            cache_dir: None,
            store: None,
            retriever_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub records: PathBuf,
    pub dataset: PathBuf,
    /// Retrieval precision/recall (needs gold sentences).
    #[arg(long)]
    pub pr: bool,
    /// Information-gain curve scored by --judge.
    #[arg(long)]
    pub ig: bool,
    #[arg(long, default_value = "http")]
    pub judge: String,
    #[arg(long, default_value_t = 4)]
    pub judge_parallel: usize,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub ig_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// "cricket", "chain:N", or a plan file (canonical JSON or plan line).
    #[arg(required_unless_present = "records")]
    pub shape: Option<String>,
    #[arg(long, conflicts_with = "shape")]
    pub records: Option<PathBuf>,
    /// Cost of one generation, in arbitrary units.
    #[arg(long, default_value_t = 1.0)]
    pub gen_cost: f64,
    /// Cost of one retrieval.
    #[arg(long, default_value_t = 0.0)]
    pub ret_cost: f64,
    #[arg(long)]
    pub json: bool,
}

pub async fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    let config = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest::cmd_ingest(&a),
        Command::Plan(a) => commands::plan::cmd_plan(&a, &config).await,
        Command::Run(a) => {
            let services = commands::run::Services::from_args(&a, &config)?;
            commands::run::cmd_run(&a, &config, &services).await.map(|r| r.outcome)
        }
        Command::Eval(a) => commands::eval::cmd_eval(&a, &config).await,
        Command::Bench(a) => commands::bench::cmd_bench(&a).await,
    }
}
