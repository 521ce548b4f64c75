use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ots_core::augment::Pooling;
use ots_core::io::FeatureFormat;
use ots_core::metrics::ApMode;
use ots_core::svm::Strategy;

#[derive(Debug, Parser)]
#[command(name = "ots", version, about = "Off-the-shelf CNN feature pipelines: linear SVMs and spatial-search retrieval")]
pub struct Cli {
    /// Seed for every randomized step (solver coordinate order).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a one-vs-all or one-vs-one linear SVM.
    Train(TrainArgs),
    /// Score or label samples with a trained model.
    Predict(PredictArgs),
    /// Compute AP / accuracy / recall@k reports.
    Evaluate(EvaluateArgs),
    /// Build a spatial-search retrieval index.
    Index(IndexArgs),
    /// Rank indexed references for each query image.
    Query(QueryArgs),
    /// Fit the retrieval feature chain (PCA + whitening).
    PreprocessFit(PreprocessFitArgs),
    /// Push features through a fitted retrieval feature chain.
    PreprocessApply(PreprocessApplyArgs),
    /// Dump augmentation geometry as TSV.
    Plans(PlansArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Binary,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => FeatureFormat::Tsv,
            FormatArg::Binary => FeatureFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Ova,
    Ovo,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Ova => Strategy::OneVsAll,
            StrategyArg::Ovo => Strategy::OneVsOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Sum,
    Max,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Sum => Pooling::Sum,
            PoolingArg::Max => Pooling::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Voc2007,
    Mit67,
    Birds,
    Flowers,
    H3d,
    Uiucatt,
}

impl PresetArg {
    pub fn key(self) -> &'static str {
        match self {
            PresetArg::Voc2007 => "voc2007",
            PresetArg::Mit67 => "mit67",
            PresetArg::Birds => "birds",
            PresetArg::Flowers => "flowers",
            PresetArg::H3d => "h3d",
            PresetArg::Uiucatt => "uiucatt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApModeArg {
    AllPoints,
    ElevenPoint,
}

impl From<ApModeArg> for ApMode {
    fn from(m: ApModeArg) -> Self {
        match m {
            ApModeArg::AllPoints => ApMode::AllPoints,
            ApModeArg::ElevenPoint => ApMode::ElevenPoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanKind {
    /// The 16 train/test representations.
    Augment,
    /// Identity and its mirror (positive set).
    Mirror,
    /// Identity, mirror and the 2x2 quadrants with their mirrors (negative set).
    Negatives,
}

/// Where sample vectors come from: a feature file, or images run through an extractor.
#[derive(Debug, Clone, Args)]
pub struct SampleInput {
    /// Feature file; rows keyed `id` or `id#k` for several representations of one sample.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    pub features: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,

    /// Image list: `id<TAB>path[<TAB>width<TAB>height]` per line.
    #[arg(long, requires = "extractor")]
    pub images: Option<PathBuf>,

    /// `toy:<grid>`, `external:<command>` or `file:<feature file>`.
    #[arg(long)]
    pub extractor: Option<String>,

    /// Describe each image by its 16 augmentation plans (requires --images).
    #[arg(long, requires = "images")]
    pub augment: bool,

    /// L2-normalize feature-file rows before use.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: SampleInput,

    /// Label file: `id<TAB>label` per line; repeat an id for several labels.
    #[arg(long)]
    pub labels: PathBuf,

    #[arg(long, value_enum, default_value_t = StrategyArg::Ova)]
    pub strategy: StrategyArg,

    /// SVM regularization constant.
    #[arg(long, conflicts_with = "preset")]
    pub c: Option<f64>,

    /// Named dataset preset supplying C.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,

    /// Relative duality-gap stopping threshold.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    #[arg(long, default_value_t = 10_000)]
    pub max_epochs: usize,

    /// Train without the constant bias feature.
    #[arg(long)]
    pub no_bias: bool,

    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,

    /// Optional training report (TSV).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub input: SampleInput,

    /// How decision values of several representations of one sample are combined.
    #[arg(long, value_enum, default_value_t = PoolingArg::Sum)]
    pub pooling: PoolingArg,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions (`predict` output) or rankings (`query` output).
    #[arg(long)]
    pub predictions: PathBuf,

    /// Ground truth: `id<TAB>label`; for recall, labels name relevance groups.
    #[arg(long)]
    pub labels: PathBuf,

    /// `ap`, `accuracy` or `recall@<k>`.
    #[arg(long)]
    pub metric: String,

    #[arg(long, value_enum, default_value_t = ApModeArg::AllPoints)]
    pub ap_mode: ApModeArg,

    /// For recall: keep the query itself in its ranking and relevant set.
    #[arg(long)]
    pub keep_self: bool,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Requested PCA dimension; clamped to what the data supports.
    #[arg(long, default_value_t = 500)]
    pub pca_dim: usize,

    /// Exponent of the signed power transform.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,

    /// Whitening regularizer added to each eigenvalue.
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Reference image list: `id<TAB>path[<TAB>width<TAB>height]`.
    #[arg(long)]
    pub refs: PathBuf,

    #[arg(long)]
    pub extractor: String,

    /// Reference patch levels.
    #[arg(long, default_value_t = 4)]
    pub h_r: u32,

    /// Default query patch levels stored with the index.
    #[arg(long, default_value_t = 3)]
    pub h_q: u32,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    /// Describe patches as given instead of by their smallest enclosing square.
    #[arg(long)]
    pub no_square: bool,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,

    /// Query image list: `id<TAB>path[<TAB>width<TAB>height]`.
    #[arg(long)]
    pub queries: PathBuf,

    #[arg(long)]
    pub extractor: String,

    /// Query patch levels; defaults to the value stored in the index.
    #[arg(long)]
    pub h_q: Option<u32>,

    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessFitArgs {
    #[arg(long)]
    pub features: PathBuf,

    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessApplyArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub features: PathBuf,

    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,

    #[arg(long, default_value_t = 2.0)]
    pub power: f64,

    #[arg(long)]
    pub out: PathBuf,

    /// Output format; defaults to --format.
    #[arg(long, value_enum)]
    pub out_format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct PlansArgs {
    #[arg(long)]
    pub width: u32,

    #[arg(long)]
    pub height: u32,

    #[arg(long, value_enum, default_value_t = PlanKind::Augment)]
    pub kind: PlanKind,

    /// The two rotation angles in degrees.
    #[arg(long, value_delimiter = ',', default_values_t = [20.0, -20.0], allow_hyphen_values = true)]
    pub rotations: Vec<f64>,

    #[arg(long, default_value_t = 4.0 / 9.0)]
    pub crop_fraction: f64,

    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
