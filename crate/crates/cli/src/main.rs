//! `berkson`: deconvolution estimates and simultaneous confidence bands for
//! regression data with Berkson errors, plus the Monte Carlo harness.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "berkson", version, about = "Deconvolution regression bands under Berkson errors")]
struct Cli {
    /// TOML (or .json) file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (falls back to BB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the regression function on the evaluation grid.
    Estimate(RunConfig),
    /// Build a simultaneous confidence band.
    Band(RunConfig),
    /// Run a Monte Carlo scenario.
    Simulate(RunConfig),
    /// Write the tabulated deconvolution kernel as (u, K) rows.
    KernelDump(RunConfig),
    /// Run the oracle agreement checks.
    Selftest(RunConfig),
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var("BB_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::field("threads", format!("BB_THREADS=`{v}` is not a count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = threads(cli.threads)? {
        if t == 0 {
            return Err(CliError::field("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let base = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let out = commands::Output { json: cli.json };
    match cli.command {
        Command::Estimate(c) => commands::estimate(&base.overlaid(c), &out),
        Command::Band(c) => commands::band(&base.overlaid(c), &out),
        Command::Simulate(c) => commands::simulate(&base.overlaid(c), &out),
        Command::KernelDump(c) => commands::kernel_dump(&base.overlaid(c), &out),
        Command::Selftest(c) => commands::selftest(&base.overlaid(c), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
