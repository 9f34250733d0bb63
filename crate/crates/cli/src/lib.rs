//! Command-line front end: synthetic corpus generation, preprocessing,
//! training, evaluation and prediction.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Partial(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coughscreen", version, about = "Cough-recording screening: spectrogram patches, CNN with contextual attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.patience=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class corpus with a manifest.
    Synth(SynthArgs),
    /// Render spectrogram patches for every recording in a manifest.
    Preprocess(PreprocessArgs),
    /// Cross-validate, refit on all folds and write a run directory.
    Train(TrainArgs),
    /// Score the held-out test split with a run's final model.
    Evaluate(EvaluateArgs),
    /// Score recordings with a trained model.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `audio/` and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Recordings per class.
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SadFlag {
    Rms,
    Flux,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleFlag {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CmapFlag {
    Magma,
    Viridis,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// CSV with `id,path` and optional `label`, `gender` columns.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Patch cache directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Sound activity detection method, or `off`.
    #[arg(long, value_enum)]
    pub sad: Option<SadFlag>,
    /// Frequency axis of the rendered spectrogram.
    #[arg(long, value_enum)]
    pub scale: Option<ScaleFlag>,
    #[arg(long, value_enum)]
    pub cmap: Option<CmapFlag>,
    /// Square patch size in pixels.
    #[arg(long)]
    pub image_px: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenderFlag {
    Baseline,
    Based,
    Specific,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patch cache written by `preprocess`.
    #[arg(long)]
    pub cache: PathBuf,
    /// Manifest with `id,path,label,gender,fold`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Add the contextual attention block.
    #[arg(long)]
    pub attention: bool,
    /// How the subject's gender is used.
    #[arg(long, value_enum)]
    pub gender: Option<GenderFlag>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Patch cache covering the recordings to score.
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to `<run>/evaluation`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score every labelled record instead of only the test split.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SexFlag {
    Female,
    Male,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Run directory, model directory or single checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    /// A WAV file or a manifest CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for `predictions.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Gender of a single WAV input.
    #[arg(long, value_enum)]
    pub gender: Option<SexFlag>,
    /// Also write per-patch probabilities and attention weights.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
    }
}
