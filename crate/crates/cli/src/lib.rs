//! The `fhiqa` command: synthesize data, split scenes, train, evaluate,
//! run inference and render benchmark tables from one configuration file.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use fhiqa_core::dataset::Attribute;

pub use config::{describe_keys, DatasetConfig, EvalConfig, RunConfig, OUTPUT_ROOT_ENV};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_SPLIT: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "fhiqa", version, about = "Scene-aware portrait image quality assessment")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.max_epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Upper bound on worker threads (default: one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Shorthand for `--set run_seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known per-scene score scales.
    Synth {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        images_per_scene: Option<usize>,
        /// Output directory (default: <output_dir>/synth).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose a scene-disjoint train/test split.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Split file to write (default: <output_dir>/split.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the training side of a split.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the test side of a split and write per-scene metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        attribute: Option<Attribute>,
        /// Output directory (default: <output_dir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one image or every image of a directory; prints JSON lines.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory.
        input: PathBuf,
        /// Write the JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a benchmark table from metric CSVs.
    Report {
        /// Metric CSVs written by `eval`.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Row order; defaults to first appearance.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Output directory (default: <output_dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

impl Cli {
    pub fn command_with_keys() -> clap::Command {
        Self::command().after_help(describe_keys())
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command_with_keys().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_CONFIG;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code(&e)
        }
    }
}
