//! `robust-sysid`: simulate attacked trajectories, fit the robust estimator,
//! certify recovery, and run and plot the recovery studies.
//!
//! Exit codes: 0 success, 1 runtime failure (explosion, missing data),
//! 2 usage or configuration error.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "robust-sysid", version, about = "Robust system identification under sparse attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override a config entry, e.g. `--set attack.p=0.8` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one attacked trajectory and write `trajectory.csv`.
    Simulate,
    /// Fit the estimator on prefixes of a trajectory and write `estimate.csv`.
    Estimate {
        /// Trajectory CSV produced by `simulate`.
        #[arg(long, value_name = "PATH")]
        trajectory: PathBuf,
    },
    /// Evaluate recovery metrics and optimality conditions against the
    /// configured ground truth and write `certificate.csv`.
    Certify {
        #[arg(long, value_name = "PATH")]
        trajectory: PathBuf,
    },
    /// Run a recovery study into `<out>/<scenario>/`.
    Experiment,
    /// Render `figure.svg` for every study found under `--out`.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files (exit 2).
    Usage(String),
    /// Failure while running (exit 1).
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ROBUST_SYSID_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("ROBUST_SYSID_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let c = &cli.common;
    match cli.command {
        Command::Simulate => commands::simulate(c),
        Command::Estimate { trajectory } => commands::estimate(c, &trajectory),
        Command::Certify { trajectory } => commands::certify(c, &trajectory),
        Command::Experiment => commands::experiment(c),
        Command::Report => report::report(&c.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
