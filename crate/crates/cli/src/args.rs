use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rvq-motion", version, about = "Residual-quantized motion codec: training, style operations and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic stylised-gait dataset (MQM files plus manifest.json)
    GenSynth(GenSynthArgs),
    /// Train a codec from a run configuration file
    Train(TrainArgs),
    /// Continue training from a checkpoint that holds optimizer state
    Resume(ResumeArgs),
    /// Encode and decode a clip through the first N codebooks
    Reconstruct(ReconstructArgs),
    /// Put the style codes of one clip on the content codes of another
    Transfer(TransferArgs),
    /// Decode the content codebooks only
    Extract(SingleClipArgs),
    /// Scale the style codes by alpha before decoding
    Interpolate(InterpolateArgs),
    /// Subtract the style codes (alpha = -1)
    Invert(SingleClipArgs),
    /// Switch style sources over time following a segment script
    Transition(TransitionArgs),
    /// Concatenate two clips in latent space and decode once
    Blend(BlendArgs),
    /// Replace style codes with random codebook entries per segment
    Augment(AugmentArgs),
    /// Interpolate the content codes of two clips
    ContentInterp(ContentInterpArgs),
    /// Train the style classifier used for evaluation
    TrainClassifier(TrainClassifierArgs),
    /// Score style transfer on a dataset split and write a JSON report
    Eval(EvalArgs),
    /// Export per-layer pooled residuals as CSV
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of content families (1 to 4)
    #[arg(long, default_value_t = 4)]
    pub contents: usize,
    /// Number of training styles
    #[arg(long, default_value_t = 4)]
    pub styles: usize,
    /// Extra styles written only to the "unseen" split
    #[arg(long, default_value_t = 0)]
    pub unseen_styles: usize,
    /// Clips per (content, style) pair
    #[arg(long, default_value_t = 10)]
    pub clips_per_pair: usize,
    /// Of those, how many go to the "test" split
    #[arg(long, default_value_t = 2)]
    pub test_per_pair: usize,
    /// Frames per clip
    #[arg(long, default_value_t = 256)]
    pub frames: usize,
    /// Base seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Checkpoint written by `train` or `resume`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration (TOML); its codec section is ignored
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Codec checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct CutoffArg {
    /// Number of leading content codebooks (defaults to the model's)
    #[arg(long)]
    pub s: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Input MQM clip
    #[arg(long)]
    pub input: PathBuf,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
    /// Codebooks used for decoding (defaults to all)
    #[arg(long)]
    pub books: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SingleClipArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub cutoff: CutoffArg,
    /// Input MQM clip
    #[arg(long)]
    pub input: PathBuf,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub cutoff: CutoffArg,
    /// Clip providing the content codes
    #[arg(long)]
    pub content: PathBuf,
    /// Clip providing the style codes
    #[arg(long)]
    pub style: PathBuf,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub clip: SingleClipArgs,
    /// Style scale; values outside [0, 1] extrapolate
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct TransitionArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub cutoff: CutoffArg,
    /// Clip providing the content codes
    #[arg(long)]
    pub content: PathBuf,
    /// Style clips, referenced by position in the script (repeatable)
    #[arg(long = "style", required = true)]
    pub styles: Vec<PathBuf>,
    /// TOML script of [[segment]] tables with style, start and end slots
    #[arg(long)]
    pub script: PathBuf,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// First clip
    #[arg(long)]
    pub first: PathBuf,
    /// Second clip
    #[arg(long)]
    pub second: PathBuf,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub clip: SingleClipArgs,
    /// Latent slots per randomly drawn style segment
    #[arg(long, default_value_t = 8)]
    pub segment_slots: usize,
    /// Seed for the code draws
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StyleFrom {
    First,
    Second,
}

#[derive(Debug, Args)]
pub struct ContentInterpArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub cutoff: CutoffArg,
    /// First clip (beta = 0)
    #[arg(long)]
    pub first: PathBuf,
    /// Second clip (beta = 1)
    #[arg(long)]
    pub second: PathBuf,
    /// Content weight of the second clip, in [0, 1]
    #[arg(long)]
    pub beta: f64,
    /// Which clip supplies the style codes
    #[arg(long, value_enum, default_value = "first")]
    pub style_from: StyleFrom,
    /// Output MQM clip
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest written by gen-synth, or a directory of MQM files
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest split to use, or "all" (ignored for directories)
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output classifier file (JSON)
    #[arg(long)]
    pub output: PathBuf,
    /// Optimisation steps
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    /// Fraction of each label's clips held out for the accuracy report
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Training seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub cutoff: CutoffArg,
    /// Classifier file from train-classifier
    #[arg(long)]
    pub classifier: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split providing the style clips (defaults to --split)
    #[arg(long)]
    pub style_split: Option<String>,
    /// k for top-k accuracy
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Report path (JSON)
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV
    #[arg(long)]
    pub output: PathBuf,
}
