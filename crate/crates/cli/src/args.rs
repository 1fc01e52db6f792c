use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "objhal", version, about = "Object-hallucination evaluation and controllable caption modelling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file of defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-caption work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Serve LLM answers from the cache only.
    #[arg(long, global = true)]
    pub replay: bool,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Lexicon,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Template,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Md,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score captions against ground truth.
    Eval(EvalArgs),
    /// Extract object mentions from captions.
    Extract(ExtractArgs),
    /// Build ε-labelled training corpora.
    #[command(subcommand)]
    Datagen(DatagenCommand),
    /// Write a seeded synthetic world: ground truth, captions and detections.
    Synth(SynthArgs),
    /// Fit the base bigram model.
    TrainBase(TrainBaseArgs),
    /// Fit the control matrix on top of a base model.
    TrainControl(TrainControlArgs),
    /// Sample captions at a control value.
    Generate(GenerateArgs),
    /// Check the interpolation bound by exact enumeration.
    VerifyBound(VerifyBoundArgs),
    /// Tabulate evaluation summaries.
    Report(ReportArgs),
    /// Train, sample and score the toy model in one go.
    ToyExperiment(ToyArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL of {id, image_id, text}.
    #[arg(long)]
    pub captions: PathBuf,
    /// JSON mapping image id to {objects, counts}.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long, value_enum)]
    pub extractor: Option<Backend>,
    #[arg(long, value_enum)]
    pub matcher: Option<Backend>,
    /// standard, only-ind, wo-ind, w-ind or all; repeatable.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<String>,
    /// caption or sentence.
    #[arg(long)]
    pub unit: Option<String>,
    /// CHAIR_s denominator in only-ind mode: eligible or all captions.
    #[arg(long)]
    pub chair_s_denominator: Option<String>,
    /// Directory with objects.txt, places.txt and positions.txt.
    #[arg(long)]
    pub lexicon_dir: Option<PathBuf>,
    /// Synonym table in TOML.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Control value recorded in the summaries.
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Run label recorded in the summaries.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long, value_enum)]
    pub extractor: Option<Backend>,
    #[arg(long)]
    pub lexicon_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatagenCommand {
    /// Split ground-truth objects into grounded and omitted.
    Split(SplitArgs),
    /// Captions naming only grounded objects (ε = -1).
    Contextual(ContextualArgs),
    /// Captions with omitted objects bracketed (ε = +1).
    Joint(JointArgs),
    /// Combine corpora at a contextual:joint ratio.
    Merge(MergeArgs),
    /// Check label discipline of a corpus.
    Lint(LintArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Detection file mapping image id to {grounded, omitted}.
    #[arg(long, conflicts_with = "visibility")]
    pub detections: Option<PathBuf>,
    /// Seeded random oracle: chance that each object is visible.
    #[arg(long)]
    pub visibility: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ContextualArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, value_enum)]
    pub generator: Option<Generator>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JointArgs {
    /// Bracket-free captions, JSONL of {id, image_id, text}.
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// contextual:joint record ratio, e.g. 10:23. Omit to keep everything.
    #[arg(long)]
    pub ratio: Option<String>,
    /// Drop brackets from joint records.
    #[arg(long)]
    pub strip_indication: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sequences per step; 0 trains on the whole corpus each step.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainBaseArgs {
    /// Corpus JSONL of {epsilon_label, text, image_id}.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainControlArgs {
    /// Base model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 48)]
    pub max_len: usize,
    /// Assign samples to these images in turn, for later evaluation.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyBoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [1.0, -1.0, 0.5])]
    pub epsilon: Vec<f64>,
    #[arg(long = "k", value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    pub k_grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub seq_len: usize,
    /// Largest number of sequences to enumerate.
    #[arg(long)]
    pub cap: Option<u128>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub summaries: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Md)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
}
