//! Command-line front end for the fedchip simulator.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 tolerance
//! violation, 3 runtime failure.

mod commands;
mod config;
mod matio;
mod metrics;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, MetricsFormat};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("tolerance violation: {0}")]
    Tolerance(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Tolerance(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fedchip",
    version,
    about = "Simulates federated training over operator states fed into fixed quantum chips"
)]
struct Cli {
    /// Experiment configuration (JSON); defaults to the built-in reference
    /// configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the master seed from the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory for metrics and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Restrict metrics emission to one format.
    #[arg(long, global = true, value_enum, value_name = "FORMAT")]
    format: Option<MetricsFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emulate O|psi> through the chip and cross-check the dense product.
    Emulate {
        /// Real N x N matrix file ("dim N" header, N rows).
        matrix: PathBuf,
        /// Unit state file ("dim N" header, N amplitudes).
        state: PathBuf,
    },
    /// Compare exact gradients, shift-state recovery, and finite differences.
    Gradcheck,
    /// Run federated training and write per-round metrics.
    Train,
    /// Decompose a matrix into permuted block-diagonal terms.
    Decompose {
        /// Real N x N matrix file ("dim N" header, N rows).
        matrix: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, AppError> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Emulate { matrix, state } => {
            commands::cmd_emulate(matrix, state, cli.out.as_deref())
        }
        Command::Gradcheck => {
            let config = load_config(&cli)?;
            commands::cmd_gradcheck(&config, cli.seed, cli.out.as_deref())
        }
        Command::Train => {
            let config = load_config(&cli)?;
            commands::cmd_train(&config, cli.seed, cli.out.as_deref(), cli.format)
        }
        Command::Decompose { matrix } => commands::cmd_decompose(matrix, cli.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("fedchip: {err}");
            ExitCode::from(err.code())
        }
    }
}
