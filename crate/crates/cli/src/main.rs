//! `wsaug`: generate INR datasets, augment and align them, and run the
//! probe experiments. Exit codes: 0 success, 1 computational failure,
//! 2 usage or configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

/// Marks an error as the caller's fault (bad flag, config, or index).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "wsaug", version, about = "Weight-space augmentation toolkit for small INR MLPs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "WSAUG_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit INRs to synthetic shapes and save the dataset.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an augmentation pipeline to every sample.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pipeline: PathBuf,
        /// Overrides the pipeline's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align sample B to sample A by weight matching.
    Align {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        b: usize,
        #[arg(long, default_value_t = wsaug::align::DEFAULT_MAX_SWEEPS)]
        max_sweeps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mix two samples and write the result as a single-sample file.
    Mixup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        variant: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        b: usize,
        /// Seed for the random permutation of the randomized variant.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that symmetries or geometric transforms behave as expected on
    /// every sample; exits 1 if any check fails.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Loss barriers between pairs of views of the same object.
    Lmc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pairs: usize,
        #[arg(long, action = ArgAction::Set)]
        aligned: bool,
        #[arg(long, default_value_t = wsaug::verify::DEFAULT_NUM_LAMBDAS)]
        lambdas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the probe classifier over several seeds and report accuracy.
    TrainProbe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Run config supplying the `augment`, `mixup` and `probe` sections.
        #[arg(long)]
        aug: Option<PathBuf>,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Experiment grids.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand)]
enum Experiment {
    /// Accuracy over a grid of object counts and views per object.
    Views {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Object counts, comma separated; overrides the config.
        #[arg(long, value_delimiter = ',')]
        objects: Option<Vec<usize>>,
        #[arg(long)]
        max_views: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Symmetry,
    Geometric,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".to_string()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Gen { config, out } => commands::gen(&config, &out),
        Command::Augment { input, pipeline, seed, out } => commands::augment(&input, &pipeline, seed, &out),
        Command::Align { input, a, b, max_sweeps, seed } => commands::align(&input, a, b, max_sweeps, seed),
        Command::Mixup { input, variant, lambda, a, b, seed, out } => {
            commands::mixup(&input, &variant, lambda, a, b, seed, &out)
        }
        Command::Verify { input, check, resolution, seed } => commands::verify(&input, check, resolution, seed),
        Command::Lmc { input, pairs, aligned, lambdas, seed, out } => {
            commands::lmc(&input, pairs, aligned, lambdas, seed, &out)
        }
        Command::TrainProbe { train, test, aug, seeds, out } => {
            commands::train_probe(&train, &test, aug.as_deref(), seeds, &out)
        }
        Command::Experiment(Experiment::Views { config, objects, max_views, out }) => {
            commands::experiment_views(config.as_deref(), objects, max_views, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
