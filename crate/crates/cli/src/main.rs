//! `ptvmc` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ptvmc", version, about = "Projected time-dependent variational Monte Carlo for spin lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Variational quench from the fully x-polarized state.
    Quench(Common),
    /// Exact state-vector trajectory of a quench.
    Exact(Common),
    /// Global-error scaling of the product-expansion schemes.
    SchemeCheck(Common),
    /// All fidelity estimators along a state-matching optimization.
    EstimatorBench(Common),
    /// A single state compression.
    Compress(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving all outputs; created if missing.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Enumerate the Hilbert space instead of sampling.
    #[arg(long)]
    pub full_summation: bool,
}

/// Exit status of a finished command.
pub enum Outcome {
    Complete,
    Partial(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let common = match &cli.command {
        Command::Quench(c) | Command::Exact(c) | Command::SchemeCheck(c) | Command::EstimatorBench(c) | Command::Compress(c) => c.clone(),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Quench(c) => commands::quench(&c),
        Command::Exact(c) => commands::exact(&c),
        Command::SchemeCheck(c) => commands::scheme_check(&c),
        Command::EstimatorBench(c) => commands::estimator_bench(&c),
        Command::Compress(c) => commands::compress(&c),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(msg)) => {
            eprintln!("partial result: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
