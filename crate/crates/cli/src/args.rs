//! Command-line grammar.

use std::path::PathBuf;

use adsm_core::embed::{Encoding, FusionMode, Space};
use adsm_core::eval::{FeatureKind, NormScope, SweepAxis, UntaggedPolicy};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "adsm",
    version,
    about = "Audio-based distributional semantic model pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub log_level: Option<LogLevel>,
    /// Report errors on standard error as JSON objects.
    #[arg(long, global = true)]
    pub json_errors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute MFCC+Δ+ΔΔ features from WAV files, or import external ones.
    Extract(ExtractArgs),
    /// Train an audio-word vocabulary with k-means.
    TrainVocab(TrainVocabArgs),
    /// Write clip embeddings in one of the embedding spaces.
    Embed(EmbedArgs),
    /// Rank tags for AUDIO clip embeddings.
    Autotag(AutotagArgs),
    /// Repeated cross-validation on triplet constraints.
    Evaluate(EvaluateArgs),
    /// Cross-validation over a range of values of one parameter.
    Sweep(SweepArgs),
    /// Check a TOML run configuration without running anything.
    ValidateConfig(ValidateConfigArgs),
    /// Write the bundled synthetic corpus to a directory.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractKind {
    Mfccdd,
    Import,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of `.wav` files, or of `.fv`/`.csv` files with `--features import`.
    #[arg(long, visible_alias = "import-dir")]
    pub audio_dir: Option<PathBuf>,
    /// Output directory for `<clip_id>.fv` files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
    #[arg(long, value_enum, default_value = "mfccdd")]
    pub features: ExtractKind,
    /// Skip unreadable or too-short files with a warning instead of failing.
    #[arg(long)]
    pub skip_invalid: bool,
}

/// Where the corpus lives. Individual paths override the files inside `--corpus`.
#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    /// Corpus directory (annotations.tsv, constraints.txt, folds/, audio/, features/).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Directory of `fold<i>.train` / `fold<i>.test` files.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Directory of `<clip_id>.fv` feature files.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct VocabArgs {
    /// Number of audio-words.
    #[arg(long)]
    pub k: Option<usize>,
    /// Clips sampled for vocabulary training.
    #[arg(long, visible_alias = "max-clips")]
    pub vocab_clips: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative inertia improvement below which Lloyd iterations stop.
    #[arg(long)]
    pub tol: Option<f64>,
    /// k-means restarts; the lowest-inertia run is kept.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, value_parser = parse_from_str::<NormScope>)]
    pub norm_scope: Option<NormScope>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long = "method", visible_alias = "space", value_parser = parse_from_str::<Space>)]
    pub space: Option<Space>,
    #[arg(long, value_parser = parse_from_str::<FeatureKind>)]
    pub feature_kind: Option<FeatureKind>,
    /// Fusion weight of the semantic part.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long, value_parser = parse_from_str::<FusionMode>)]
    pub fusion_mode: Option<FusionMode>,
    /// SVD rank (0 disables the reduction).
    #[arg(long)]
    pub svd: Option<usize>,
    /// Tags predicted per clip by the auto-tagger.
    #[arg(long = "n", visible_alias = "n-tags")]
    pub n_tags: Option<usize>,
    #[arg(long, value_parser = parse_from_str::<Encoding>)]
    pub encoding: Option<Encoding>,
    /// What ADSM does with clips that have no usable tags.
    #[arg(long = "adsm-untagged", value_parser = parse_from_str::<UntaggedPolicy>)]
    pub untagged: Option<UntaggedPolicy>,
}

#[derive(Debug, Args)]
pub struct TrainVocabArgs {
    /// Directory of `<clip_id>.fv` feature files.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// File listing training clip ids, one per line (default: every clip).
    #[arg(long)]
    pub train_clips: Option<PathBuf>,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Output vocabulary file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Clips whose annotations build the tag matrix and SVD (default: every clip).
    #[arg(long)]
    pub train_clips: Option<PathBuf>,
    /// Clips to embed (default: every clip with features).
    #[arg(long)]
    pub clips: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AutotagArgs {
    /// Directory of AUDIO embeddings written by `embed --space audio`.
    #[arg(long)]
    pub emb: PathBuf,
    /// Tag matrix written by `embed`.
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Output TSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Use the bundled synthetic corpus instead of `--corpus`.
    #[arg(long)]
    pub demo: bool,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub eval: EvaluateArgs,
    #[arg(long, value_parser = parse_from_str::<SweepAxis>)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ValidateConfigArgs {
    /// Configuration file (defaults to `--config`).
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub clips_per_class: usize,
    #[arg(long, default_value_t = 17)]
    pub demo_seed: u64,
}

fn parse_from_str<T: std::str::FromStr<Err = adsm_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: adsm_core::Error| e.to_string())
}
