//! `sq-meanest`: experiment driver for statistical-query mean estimation.

mod commands;
mod output;
mod specs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, EstimateArgs, HardnessArgs, VerifyArgs};
use specs::{config_err, ConfigError};

/// Environment variable capping the number of worker threads.
const THREADS_VAR: &str = "SQ_MEANEST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sq-meanest", version, about = "Mean estimation over normed spaces with statistical queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an estimator on one instance for several repetitions.
    Estimate(EstimateArgs),
    /// Sweep oracle tolerances on a hard family and report success rates.
    Hardness(HardnessArgs),
    /// Check the geometric invariants; exits 1 naming any that fail.
    Verify(VerifyArgs),
    /// Time estimators on random instances.
    Bench(BenchArgs),
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_err(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<commands::Outcome> {
    configure_threads()?;
    match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Hardness(a) => commands::hardness(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => match outcome.failed {
            None => ExitCode::SUCCESS,
            Some(what) => {
                eprintln!("invariant failed: {what}");
                ExitCode::from(1)
            }
        },
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
