use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "raxn", version, about = "Residual axial networks: build, count, train and evaluate")]
pub struct Cli {
    /// Intra-op worker threads; results are identical for any value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a model's layers, depth and totals.
    Inspect(InspectArgs),
    /// Per-layer parameter and MAC counts.
    Count(CountArgs),
    /// Cost of one model relative to another.
    Compare(CompareArgs),
    /// Single-image forward latency.
    Bench(BenchArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a classifier checkpoint.
    Eval(EvalArgs),
    /// Train a super-resolution model.
    SrTrain(SrTrainArgs),
    /// Evaluate a super-resolution checkpoint against bicubic upsampling.
    SrEval(SrEvalArgs),
    /// Finite-difference gradient check of block kinds.
    Gradcheck(GradcheckArgs),
    /// Cost tables for every depth plus the recursive models.
    ReproReport(ReproArgs),
}

/// Model selection. Flags override values from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shorthand such as resnet26, ran50, ran26-4, drrn19, rarnet_b1_u9.
    #[arg(long, short)]
    pub model: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub widen_k: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Comma-separated bottleneck widths, e.g. 16,32,64,128.
    #[arg(long, value_delimiter = ',')]
    pub stage_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Recursive blocks.
    #[arg(long = "blocks", short = 'B')]
    pub blocks: Option<usize>,
    /// Residual units per recursive block.
    #[arg(long = "units", short = 'U')]
    pub units: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub batch_norm: Option<bool>,
    /// Defaults to the config file's seed, then $RAXN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// synthetic, cifar10 or pnm.
    #[arg(long = "data")]
    pub source: Option<String>,
    /// two-gaussians, oriented-bars or sr-edges.
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub train_path: Option<String>,
    #[arg(long)]
    pub val_path: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON layer listing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Leave batch-norm affine parameters out.
    #[arg(long)]
    pub no_bn: bool,
    #[arg(long)]
    pub include_bias: bool,
    /// Convolution and linear weights only.
    #[arg(long, conflicts_with_all = ["no_bn", "include_bias"])]
    pub weights_only: bool,
    /// CSV, or JSON when the name ends in .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub base: String,
    #[arg(long)]
    pub new: String,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Also time both models with this many repetitions.
    #[arg(long, default_value_t = 0)]
    pub latency_reps: usize,
    /// JSON, CSV or markdown by extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// off, random or always.
    #[arg(long)]
    pub flip: Option<String>,
    #[arg(long)]
    pub crop_pad: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Run directory for config.json, history.csv, model.ckpt, summary.json.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SrOverrides {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gradient-norm clip θ (scaled by 1/lr); 0 disables.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub lr_step: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct SrTrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sr: SrOverrides,
    #[arg(long, default_value = "runs/sr")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SrEvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Write the model's outputs as PGM files here.
    #[arg(long)]
    pub save_images: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Block kind (basic, bottleneck, ran_basic, ran_bottleneck, drrn_unit,
    /// rarnet_unit); all kinds when omitted.
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    #[arg(long, default_value_t = raxn::check::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = raxn::check::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    /// Forward-pass repetitions per model for the latency column; 0 skips.
    #[arg(long, default_value_t = 3)]
    pub latency_reps: usize,
    /// Markdown report; a .json sibling carries the same numbers.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
