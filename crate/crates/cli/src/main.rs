//! `blockstruct`: generate, infer, classify, sweep, aggregate, order.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Invalid invocation or settings; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "blockstruct",
    version,
    about = "Bipartite vs core-periphery structure under SBM and dcSBM"
)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a planted SBM/dcSBM graph or a surrogate transaction series.
    Generate(GenerateArgs),
    /// Learn a block model on an edge list by restarted BP-EM.
    Infer(InferArgs),
    /// Label a learned model or an affinity matrix.
    Classify(ClassifyArgs),
    /// Run one of the figure sweeps.
    Sweep(SweepArgs),
    /// Aggregate a transaction log into undirected graphs.
    Aggregate(AggregateArgs),
    /// Order nodes by learned marginals and emit the permuted Laplacian.
    Order(OrderArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Settings file: key=value lines or a JSON object. Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GenModel {
    Sbm,
    Dcsbm,
    Surrogate,
}

#[derive(Copy, Clone, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaKind {
    Constant,
    Bimodal,
    Powerlaw,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub model: GenModel,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, value_enum)]
    pub theta: Option<ThetaKind>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Surrogate length in working days.
    #[arg(long)]
    pub days: Option<usize>,
    /// Surrogate bank count.
    #[arg(long)]
    pub banks: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    /// Edge list (`N=<n>` header, then `i j` lines).
    #[arg(long)]
    pub input: PathBuf,
    /// sbm or dcsbm.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `learned.json` written by `infer`.
    #[arg(long, conflicts_with = "affinity", required_unless_present = "affinity")]
    pub input: Option<PathBuf>,
    /// Affinity rows, e.g. `2,10;10,2`.
    #[arg(long)]
    pub affinity: Option<String>,
    /// Block fractions, e.g. `0.5,0.5` (default: equal).
    #[arg(long, requires = "affinity")]
    pub fractions: Option<String>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
pub enum SweepName {
    Fig1,
    Fig2,
    Fig3,
    Agg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub name: SweepName,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Comma-separated grid (delta, alpha) or horizons in days (agg).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Comma-separated models (sbm, dcsbm).
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Transaction log for `agg`; without it a surrogate series is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub banks: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Cumulative aggregate of the first DAYS snapshots.
    #[arg(long, conflicts_with = "window")]
    pub days: Option<usize>,
    /// Consecutive windows of this many snapshots.
    #[arg(long)]
    pub window: Option<usize>,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct OrderArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Edge list the model was learned on.
    #[arg(long)]
    pub graph: PathBuf,
    /// `learned.json` written by `infer`.
    #[arg(long)]
    pub learned: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
