//! The `vgcn` command-line tool.
//!
//! Every command writes its outputs into `--out` atomically, together with
//! a `manifest.json` describing how it was invoked. Failures print a JSON
//! object `{"error", "message", "exit_code", "path"?}` on stderr and exit
//! with 2 (bad input), 3 (numerical failure) or 4 (infeasible request).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::graph::{Metric, PerturbationMode};

pub use config::{DatasetConfig, ExperimentConfig, InputHash, RunManifest, Scenario};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vgcn", version, about = "Variational graph convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a KNN graph from a features file.
    PrepareKnn(PrepareKnnArgs),
    /// Randomly add and remove edges of a graph.
    Perturb(PerturbArgs),
    /// Train a VGCN or a plain GCN.
    Train(TrainArgs),
    /// Score a trained model on the validation and test nodes.
    Evaluate(EvaluateArgs),
    /// Grid search over training configs.
    Grid(GridArgs),
    /// Compare a trained posterior with its prior.
    AnalyzePosterior(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareKnnArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    #[arg(long)]
    pub out: PathBuf,
}

/// Edge removal count: a number or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoveCount {
    All,
    Count(usize),
}

impl std::str::FromStr for RemoveCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(RemoveCount::All)
        } else {
            s.parse().map(RemoveCount::Count).map_err(|e| format!("{s:?}: {e}"))
        }
    }
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Features file; only its node count is used.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub add: usize,
    #[arg(long, default_value = "0")]
    pub remove: RemoveCount,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "uniform-random")]
    pub mode: PerturbModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PerturbModeArg {
    UniformRandom,
    DegreePreserving,
}

impl From<PerturbModeArg> for PerturbationMode {
    fn from(m: PerturbModeArg) -> Self {
        match m {
            PerturbModeArg::UniformRandom => PerturbationMode::UniformRandom,
            PerturbModeArg::DegreePreserving => PerturbationMode::DegreePreserving,
        }
    }
}

/// Dataset location and overrides shared by the config-driven commands.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `train`; its `config.json` is used unless
    /// `--config` is given.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// JSON array of partial training configs, each overriding the base.
    #[arg(long, conflicts_with = "standard_grid", required_unless_present = "standard_grid")]
    pub grid: Option<PathBuf>,
    /// Use the 96-cell rho1 x tau_prior x tau x beta grid.
    #[arg(long)]
    pub standard_grid: bool,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `train` for a VGCN.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
    /// Defaults to the checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleSpec(_) => EXIT_INFEASIBLE,
        Error::NonFiniteObjective { .. } | Error::AllCellsFailed => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Machine-readable error report.
pub fn error_json(e: &Error) -> serde_json::Value {
    let mut v = serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    });
    if let Some(p) = e.path() {
        v["path"] = serde_json::Value::String(p.display().to_string());
    }
    v
}

pub fn run(cli: Cli) -> crate::Result<serde_json::Value> {
    match cli.command {
        Command::PrepareKnn(a) => commands::prepare_knn(&a),
        Command::Perturb(a) => commands::perturb(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Grid(a) => commands::grid(&a),
        Command::AnalyzePosterior(a) => commands::analyze_posterior(&a),
    }
}

/// Parses `args`, runs the command, reports, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
