//! Command-line surface: training, evaluation, gradient checking, ablation
//! and analysis sweeps, synthetic data and checkpoint inspection.
//!
//! Exit codes: 0 success, 1 usage/config/data error, 2 numerical abort,
//! 3 gradient-check failure. `MIXSSM_THREADS` sets the worker count
//! (default 1, the bitwise-reproducible mode).

pub mod commands;
pub mod config;
pub mod error;
pub mod sweeps;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, EXIT_GRADCHECK, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "mixssm", version, about = "Mix-SSM image classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus an epoch log beside it.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image folder; defaults to `[data] train` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Seed for both initialization and shuffling.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Evaluate a checkpoint and write accuracy, macro metrics and the confusion matrix.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Finite-difference check of every branch, the selective module and a block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = mixssm_core::gradcheck::SUITE_SEEDS)]
        seeds: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train and evaluate the eight branch subsets.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation folder; defaults to the training data.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run settings concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Sweep aggregation mode, selective kernel size or pooling method.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, value_enum)]
        sweep: sweeps::Sweep,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Generate the synthetic shape dataset as PPM folders.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a checkpoint's configuration and parameter counts.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

/// Worker count from `MIXSSM_THREADS`.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("MIXSSM_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("MIXSSM_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
