//! Command-line argument definitions.
//!
//! Every subcommand shares the `--config/--seed/--out` trio; the rest are
//! per-command overrides for the matching config values. Flags always win
//! over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::PolicyKind;

#[derive(Debug, Parser)]
#[command(
    name = "aloft",
    version,
    about = "Train, evaluate, and inspect depth-driven collision-avoidance agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the exploration/replay training loop over a world curriculum.
    Train(TrainArgs),
    /// Roll out a checkpoint or baseline policy and report survival statistics.
    Eval(EvalArgs),
    /// Depth-estimation dataset and network commands.
    #[command(subcommand)]
    Gan(GanCommand),
    /// Render CSV logs as SVG plots.
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum GanCommand {
    /// Render image/depth pairs from random collision-free poses.
    GenData(GanGenArgs),
    /// Train the depth estimator on a pair dataset.
    Train(GanTrainArgs),
    /// Report reconstruction error of a trained estimator on a dataset.
    Eval(GanEvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run-configuration file; flags override its values.
    #[arg(long, value_name = "PATH", global = false)]
    pub config: Option<PathBuf>,
    /// Root seed for every random draw this command makes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for all outputs; created if absent.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// World files in curriculum order; replaces the config's list.
    #[arg(long = "world", value_name = "PATH")]
    pub world: Vec<PathBuf>,
    /// Network variant to train.
    #[arg(long, value_enum)]
    pub variant: Option<PolicyKind>,
    /// Environment-step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Periodic checkpoint interval in steps; 0 keeps only the final one.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// World file to evaluate in; replaces the config's list.
    #[arg(long = "world", value_name = "PATH")]
    pub world: Vec<PathBuf>,
    /// Policy to run: a learned variant (needs --checkpoint) or a baseline.
    #[arg(long, value_enum)]
    pub variant: Option<PolicyKind>,
    /// Trained network to load for learned variants.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Episode count.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GanGenArgs {
    #[command(flatten)]
    pub common: Common,
    /// World file to render; replaces the config's list.
    #[arg(long = "world", value_name = "PATH")]
    pub world: Vec<PathBuf>,
    /// Number of pairs to render.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GanTrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Pair dataset; split per [gan] n_train/n_heldout unless --heldout is given.
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// Separate held-out pair dataset.
    #[arg(long, value_name = "PATH")]
    pub heldout: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GanEvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained estimator to load.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Pair dataset to score.
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training log to render as a learning curve.
    #[arg(long, value_name = "CSV")]
    pub curve: Option<PathBuf>,
    /// Attention weights to render as a bar strip.
    #[arg(long, value_name = "CSV")]
    pub attention: Option<PathBuf>,
}
