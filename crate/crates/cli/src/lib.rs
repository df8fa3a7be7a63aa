//! Command-line harness: configuration, seeding and experiment recipes.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod stats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gamps_core::gradient::EstimatorKind;

use crate::config::{Experiment, Overrides};
use crate::error::{invalid, CliResult};

#[derive(Debug, Parser)]
#[command(name = "gamps", version, about = "Gradient-aware model-based policy search experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; repetition `r` uses `seed + r`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// gamps, ml, reinforce or pgt.
    #[arg(long, global = true)]
    pub estimator: Option<EstimatorKind>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Collect behavior-policy trajectories with a manifest.
    Collect,
    /// Run policy search and write per-repetition and aggregate curves.
    Train {
        /// Dataset written by `collect`; collected on the fly when omitted.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Evaluate the initial policy, or a saved one, in the true environment.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
    },
    /// Model accuracy, action-value error and gradient cosine for ML and GAMPS fits.
    Table1,
    /// Gradient bias against its KL upper bounds.
    Bounds,
    /// Gradient-aware learning curves for q = 1, 2 and infinity.
    Qstudy,
}

pub fn load_experiment(global: &GlobalArgs) -> CliResult<Experiment> {
    let path = global.config.as_ref().ok_or_else(|| invalid("--config is required"))?;
    let overrides = Overrides {
        seed: global.seed,
        reps: global.reps,
        out: global.out.clone(),
        estimator: global.estimator,
    };
    Experiment::load(path, &overrides)
}

/// Runs a parsed command and returns the files it wrote.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let exp = load_experiment(&cli.global)?;
    match &cli.command {
        Command::Collect => commands::collect(&exp),
        Command::Train { dataset } => commands::train(&exp, dataset.as_deref()),
        Command::Evaluate { policy } => commands::evaluate(&exp, policy.as_deref()),
        Command::Table1 => commands::table1(&exp),
        Command::Bounds => commands::bounds(&exp),
        Command::Qstudy => commands::qstudy(&exp),
    }
}
