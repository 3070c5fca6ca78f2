//! `rem`: private marginal release experiments from the command line.

mod commands;
mod output;
mod workload_spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Exit status for bad flags, paths or workload specs.
pub const EXIT_USAGE: u8 = 2;
/// Exit status when the requested noise does not fit the privacy budget.
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rem",
    version,
    about = "Private marginal release via residual reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a mechanism x postprocessor x trial grid and write a report.
    Run(RunConfig),
    /// Rebuild workload answers from a measurement archive.
    Replay(ReplayArgs),
    /// Compare structured reconstruction with dense pseudoinverse oracles.
    Oracle(OracleArgs),
    /// Infer a domain from a CSV file and write it as JSON.
    Prep(PrepArgs),
    /// Write the bundled Titanic-shaped synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    /// Scalable MWEM over marginal measurements.
    Smwem,
    /// Measure every residual of the downward closure once.
    Residualplanner,
}

/// Everything a run depends on; echoed into `run_config.json`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub mechanism: MechanismKind,
    /// Dataset CSV; the bundled synthetic dataset when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Domain JSON fixing category order; inferred from the data when absent.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// `all-K-way`, a JSON list of cliques, or a .json file.
    #[arg(long, default_value = "all-3-way")]
    pub workload: String,
    /// Comma-separated privacy levels.
    #[arg(long, value_delimiter = ',', required = true)]
    pub epsilon: Vec<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub delta: f64,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Trial `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scalable MWEM rounds.
    #[arg(long, default_value_t = 30)]
    pub rounds: usize,
    /// Scalable MWEM budget fraction for the total query.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Per-residual variances (JSON list of `{clique, sigma2}`); uniform
    /// budget split when absent.
    #[arg(long)]
    pub noise_scales: Option<PathBuf>,
    /// Comma-separated postprocessors.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,trunc,trunc+rescale,lnn"
    )]
    pub postprocessors: Vec<String>,
    /// Override the non-negative solver's round limit per attempt.
    #[arg(long)]
    pub lnn_max_rounds: Option<usize>,
    /// Wall-clock limit per non-negative solver attempt, in seconds.
    #[arg(long)]
    pub lnn_time_limit: Option<f64>,
    /// Record wall-clock seconds in the report; zero otherwise, which keeps
    /// reports byte-identical across runs.
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long, default_value = "all-3-way")]
    pub workload: String,
    /// Domain JSON; the bundled synthetic domain when absent.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// Output file for the reconstructed marginals; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    SignFlip,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Attribute sizes of the test domain.
    #[arg(long, value_delimiter = ',', default_value = "2,3,2")]
    pub domain_sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Corrupt the structured results to check that the oracles notice.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Existing domain to validate the data against.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    #[arg(long)]
    pub domain_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub domain_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(cfg) => commands::run(cfg),
        Command::Replay(args) => commands::replay(args),
        Command::Oracle(args) => commands::oracle(args),
        Command::Prep(args) => commands::prep(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => commands::report_failure(&err),
    }
}
