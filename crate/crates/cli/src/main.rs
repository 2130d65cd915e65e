//! Command-line driver for spectral jump-process simulation and control.
//!
//! Four subcommands cover the workflow: `simulate` writes trajectory
//! dumps, `solve` computes an optimal relaxed policy on a grid,
//! `evaluate` cross-validates the pathwise and embedded-chain cost
//! estimators, and `verify` runs the built-in property suite. Exit codes
//! separate failure classes: 2 for configuration errors, 3 for numerical
//! failures, 4 for verification failures.

mod artifacts;
mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use pdmp_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pdmp", version, about = "Spectral jump-process simulation and control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write dense and jump-chain CSVs
    Simulate(RunArgs),
    /// Solve for an optimal relaxed policy on an interpolation grid
    Solve(RunArgs),
    /// Estimate the pathwise and chain costs and test their agreement
    Evaluate(RunArgs),
    /// Run the built-in property suite
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override the configuration's master seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores)
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory (wins over the run block's out_dir; default "out")
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Optional configuration to validate and fingerprint in the report
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores)
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory (wins over the run block's out_dir; default "out")
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Failures ranked by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments, or file i/o (exit 2).
    Config(String),
    /// The computation itself failed: blow-up, overflow, lost contraction,
    /// iteration cap (exit 3).
    Numerical(String),
    /// A verification verdict failed (exit 4).
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(_) | CoreError::Config(_) => CliError::Config(e.to_string()),
            CoreError::NumericalBlowUp { .. }
            | CoreError::Quadrature(_)
            | CoreError::BoundingOverflow(_)
            | CoreError::ContractionViolation { .. }
            | CoreError::IterationCap(_) => CliError::Numerical(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = match &cli.command {
        Command::Simulate(a) | Command::Solve(a) | Command::Evaluate(a) => a.workers,
        Command::Verify(a) => a.workers,
    };
    if let Some(n) = workers.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate_cmd(args),
        Command::Solve(args) => commands::solve_cmd(args),
        Command::Evaluate(args) => commands::evaluate_cmd(args),
        Command::Verify(args) => commands::verify_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
