//! Command-line entry point for the reconstruction pipeline.
//!
//! Subcommands: `simulate` (build a synthetic dataset), `train` (fit the
//! conditional denoiser), `sample` (reconstruct maps, optionally as a
//! Monte-Carlo ensemble with uncertainty), `evaluate` (score predictions,
//! optionally sweeping sampler settings).
//!
//! Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 checkpoint
//! error, 1 anything else. `DIFFSOS_THREADS` caps worker parallelism.

mod commands;

use clap::{Parser, Subcommand};
use diffsos_core::error::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "diffsos", version, about = "Conditional-diffusion speed-of-sound reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset of (map, waveform) pairs.
    Simulate {
        /// Config file (key = value sections); defaults used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Sample count override (dataset.n).
        #[arg(long)]
        n: Option<usize>,
        /// Seed override (dataset.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Extra overrides, section.key=value.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Train the denoiser on a simulated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an interrupted run's checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Reconstruct maps for a dataset split from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse-process step count (sampler.steps).
        #[arg(long)]
        steps: Option<usize>,
        /// Stochasticity (sampler.eta).
        #[arg(long)]
        eta: Option<f64>,
        /// Monte-Carlo passes per input (sampler.ensemble).
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset split to reconstruct: train | val | test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Score predictions against ground truth, or sweep sampler settings.
    Evaluate {
        /// Directory of predicted map tensors (<id>.dsos).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth maps: a dataset root or its sos/ directory.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Sweep mode: checkpoint to sample with.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sweep mode: dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated step counts to sweep.
        #[arg(long)]
        sweep_steps: Option<String>,
        /// Comma-separated ensemble sizes to sweep.
        #[arg(long)]
        sweep_ensemble: Option<String>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Io { .. } => 3,
        Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn main() {
    diffsos_core::exec::init_thread_cap();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            n,
            seed,
            set,
        } => commands::simulate(config.as_deref(), &out, n, seed, set),
        Cmd::Train {
            config,
            data,
            out,
            resume,
            set,
        } => commands::train(config.as_deref(), &data, &out, resume.as_deref(), set),
        Cmd::Sample {
            checkpoint,
            data,
            out,
            steps,
            eta,
            ensemble,
            seed,
            split,
            set,
        } => commands::sample(
            &checkpoint,
            &data,
            &out,
            steps,
            eta,
            ensemble,
            seed,
            &split,
            set,
        ),
        Cmd::Evaluate {
            pred,
            truth,
            out,
            checkpoint,
            data,
            sweep_steps,
            sweep_ensemble,
            set,
        } => commands::evaluate(
            pred.as_deref(),
            truth.as_deref(),
            &out,
            checkpoint.as_deref(),
            data.as_deref(),
            sweep_steps.as_deref(),
            sweep_ensemble.as_deref(),
            set,
        ),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
