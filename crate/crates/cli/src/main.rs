//! `treecon` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treecon::train::ConstraintMode;
use treecon::Error;

#[derive(Debug, Parser)]
#[command(
    name = "treecon",
    version,
    about = "Tree-constrained graph generation toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for per-sample stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic L-system tree dataset.
    Gen(GenArgs),
    /// Train the edge scorer on a dataset.
    Train(TrainArgs),
    /// Predict graphs for a dataset with a trained model.
    Infer(InferArgs),
    /// Project edge probabilities onto a minimum spanning tree.
    Project(ProjectArgs),
    /// Score predicted graphs against ground truth.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Render graphs to PNG or SVG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// Global index of the first sample.
    #[arg(long)]
    pub first: Option<usize>,
    /// L-system spec JSON (default: built-in rule set).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Also write a PNG per sample.
    #[arg(long)]
    pub render: bool,
    /// Resample branch chains every this many pixels.
    #[arg(long)]
    pub resample: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (with manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    /// unconstrained, test-time, train-only or ours.
    #[arg(long)]
    pub mode: Option<ConstraintMode>,
    /// Passes over the training split.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Suppression magnitude.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Hidden width of the pair scorer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Fixed positive-pair loss weight (default: #neg/#pos per sample).
    #[arg(long)]
    pub pos_weight: Option<f64>,
    /// Node perturbation std in normalized units.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of the dataset held out for checkpoint selection.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Inference mode; projection is applied for `ours` and `test-time`.
    #[arg(long)]
    pub mode: Option<ConstraintMode>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Edge probabilities JSON.
    #[arg(long)]
    pub probs: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub k_points: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Random instances per check.
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// A single graph file.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub graph: Option<PathBuf>,
    /// A dataset or prediction directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub width: u32,
    #[arg(long, default_value_t = 512)]
    pub height: u32,
    #[arg(long, default_value_t = 2.0)]
    pub stroke: f64,
    /// Draw node discs of this radius.
    #[arg(long)]
    pub node_radius: Option<f64>,
    /// Write SVG instead of PNG.
    #[arg(long)]
    pub svg: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Parse { .. } | Error::Invalid(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
