use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

/// Spatial gradient inference with nearest-neighbor Gaussian processes.
#[derive(Debug, Parser)]
#[command(name = "nndp", version)]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with true gradients.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler and write the chain.
    Fit(FitArgs),
    /// Posterior gradients from the nearest-neighbor derivative process.
    Grad(GradCommand),
    /// Finite-difference gradients of the fitted surface.
    Fd(FdCommand),
    /// Gradients from the dense Gaussian process at posterior-median parameters.
    Exact(ExactCommand),
    /// Correlation and MSE of a gradient file against true gradients.
    Metrics(MetricsArgs),
    /// Wall-clock comparison of the gradient methods across problem sizes.
    Bench(BenchArgs),
    /// Convert an arbitrary CSV into the dataset schema.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Surface: 1 (two-dimensional sinusoid) or 2 (one-dimensional chirp).
    #[arg(long, default_value_t = 1)]
    pub pattern: u8,
    /// Grid mesh on the unit cube.
    #[arg(long, conflicts_with = "uniform")]
    pub mesh: Option<f64>,
    /// Number of uniformly sampled locations instead of a grid.
    #[arg(long)]
    pub uniform: Option<usize>,
    /// Per-axis range `lower:upper` for uniform sampling; repeat per axis.
    #[arg(long = "range", requires = "uniform")]
    pub ranges: Vec<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    /// Neighbors per site.
    #[arg(long)]
    pub m: Option<usize>,
    /// Kernel: matern32, matern52 or rbf.
    #[arg(long)]
    pub smoothness: Option<String>,
    /// Site ordering: sum, lex or input.
    #[arg(long)]
    pub ordering: Option<String>,
    /// Neighbor rule: nearest or predecessors.
    #[arg(long)]
    pub stencil: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct ChainArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Initial proposal standard deviation on log phi.
    #[arg(long)]
    pub phi_step: Option<f64>,
    #[arg(long)]
    pub phi_init: Option<f64>,
    /// Keep the proposal step fixed during burn-in.
    #[arg(long)]
    pub no_adapt: bool,
    /// noise-free or full.
    #[arg(long)]
    pub mode: Option<String>,
    /// Add an intercept column to the regression (full mode).
    #[arg(long)]
    pub intercept: bool,
}

#[derive(Debug, Default, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub sigma2_shape: Option<f64>,
    #[arg(long)]
    pub sigma2_scale: Option<f64>,
    #[arg(long)]
    pub phi_lower: Option<f64>,
    #[arg(long)]
    pub phi_upper: Option<f64>,
    #[arg(long)]
    pub tau2_shape: Option<f64>,
    #[arg(long)]
    pub tau2_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, short)]
    pub data: PathBuf,
    /// Output chain file.
    #[arg(long)]
    pub chain: PathBuf,
    /// Output latent draws (required in full mode).
    #[arg(long)]
    pub latent: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub chain_args: ChainArgs,
    #[command(flatten)]
    pub priors: PriorArgs,
}

/// Inputs shared by the gradient commands. Without `--chain` the model is
/// fitted first.
#[derive(Debug, Args)]
pub struct FitSource {
    #[arg(long, short)]
    pub data: PathBuf,
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long, requires = "chain")]
    pub latent: Option<PathBuf>,
    /// Evaluation locations (default: the data locations).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub chain_args: ChainArgs,
    #[command(flatten)]
    pub priors: PriorArgs,
}

#[derive(Debug, Default, Args)]
pub struct DirectionArgs {
    /// Directions as `e<k>` or `a:b`, comma separated (default: all axes).
    #[arg(long, value_delimiter = ',')]
    pub directions: Vec<String>,
}

#[derive(Debug, Default, Args)]
pub struct GradArgs {
    #[command(flatten)]
    pub select: DirectionArgs,
    /// Draws per batch for batch-median estimates.
    #[arg(long)]
    pub batch: Option<usize>,
    /// fast or reference.
    #[arg(long)]
    pub engine: Option<String>,
    /// Nudge locations that are equidistant to two sites instead of failing.
    #[arg(long)]
    pub perturb: bool,
}

#[derive(Debug, Args)]
pub struct Outputs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Gradient norm per location (canonical directions only).
    #[arg(long)]
    pub magnitude: Option<PathBuf>,
    /// Metrics file; written when the data carry true gradients.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCommand {
    #[command(flatten)]
    pub source: FitSource,
    #[command(flatten)]
    pub grad: GradArgs,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Default, Args)]
pub struct FdArgs {
    /// Step as a multiple of the minimal separation.
    #[arg(long)]
    pub scale: Option<f64>,
    /// sampled or mean.
    #[arg(long)]
    pub fd_mode: Option<String>,
    /// Draws per batch for batch-median estimates (sampled mode).
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FdCommand {
    #[command(flatten)]
    pub source: FitSource,
    #[command(flatten)]
    pub select: DirectionArgs,
    #[command(flatten)]
    pub fd: FdArgs,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct ExactCommand {
    #[command(flatten)]
    pub source: FitSource,
    #[command(flatten)]
    pub select: DirectionArgs,
    /// Largest number of sites accepted.
    #[arg(long)]
    pub cap: Option<usize>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, short)]
    pub gradients: PathBuf,
    /// Dataset with `tg_e*` columns.
    #[arg(long, short)]
    pub data: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Problem sizes; each is rounded to a square grid.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Finite-difference step scale.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Coordinate column names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub coords: Vec<String>,
    /// Value column name.
    #[arg(long)]
    pub value: String,
    #[arg(long, short)]
    pub out: PathBuf,
}
