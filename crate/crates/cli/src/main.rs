//! `sgmm`: smoothed IV quantile estimation, simulation designs and the
//! quantile Euler-equation decile table.
//!
//! Exit codes: 0 success, 2 configuration, 3 input data, 4 solver (including
//! a non-converged estimate), 5 output.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{EstimateArgs, EulerArgs, FileConfig, SimulateArgs};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sgmm", version, about = "Smoothed MM/GMM estimation for IV quantile models")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, env = "SGMM_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). 1 runs single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one model from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo designs.
    Simulate(SimulateArgs),
    /// Decile table for the quantile Euler equation.
    Euler(EulerArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(k) = cli.threads.or(file.threads) {
        if k == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Estimate(a) => commands::estimate(&a.resolve(file.estimate, file.seed)?),
        Command::Simulate(a) => commands::simulate(&a.resolve(file.simulate, file.seed)?),
        Command::Euler(a) => commands::euler(&a.resolve(file.euler, file.seed)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgmm: {e}");
            e.exit_code()
        }
    }
}
