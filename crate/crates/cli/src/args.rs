use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmerw::pipeline::WeightScheme;

#[derive(Debug, Parser)]
#[command(name = "hmerw", version, about = "Small-target detection with hierarchical maximal entropy random walks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect targets in one image or every image of a directory.
    Detect(DetectArgs),
    /// Score a corpus of images against their ground truth.
    Eval(EvalArgs),
    /// Re-run the evaluation over a range of one parameter.
    Sweep(SweepArgs),
    /// Swiss-roll anomaly experiment on a kNN graph.
    SimulateSwissroll(SwissRollArgs),
    /// Render a synthetic scene and its ground truth.
    RenderScene(RenderArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML or JSON file with defaults for the pipeline flags, seed and jobs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Patch radius.
    #[arg(short = 'R', long = "radius")]
    pub radius: Option<usize>,
    /// Number of sub-graphs in the HMERW sum.
    #[arg(short = 'K', long = "levels")]
    pub k: Option<usize>,
    /// Threshold multiplier on the fusion-map standard deviation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Leave the centre pixel out of the innermost ring mean.
    #[arg(long)]
    pub ring_excludes_center: bool,
    /// Edge weights of the pixel graph.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Rccc,
    EuclideanLattice,
}

impl From<SchemeArg> for WeightScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Rccc => WeightScheme::Rccc,
            SchemeArg::EuclideanLattice => WeightScheme::EuclideanLattice,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Image file (PGM or PNG) or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the filtered image, HMERW and coefficient maps and eigenvalues.
    #[arg(long)]
    pub emit_intermediates: bool,
    /// Also dump the symmetrized weight matrix as `i j w` triplets.
    #[arg(long)]
    pub emit_weights: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of images, each with a `<stem>.gt.json` beside it.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum SweepParam {
    #[value(name = "R")]
    #[serde(rename = "R")]
    Radius,
    #[value(name = "K")]
    #[serde(rename = "K")]
    Levels,
    #[value(name = "lambda")]
    #[serde(rename = "lambda")]
    Lambda,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of images, each with a `<stem>.gt.json` beside it.
    #[arg(long)]
    pub input: PathBuf,
    /// The single parameter to vary.
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SwissRollArgs {
    /// Manifold points (anomalies come on top).
    #[arg(short = 'n', long = "nodes", default_value_t = 10_000)]
    pub nodes: usize,
    /// Neighbours per node in the kNN graph.
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
    /// Gaps of anomalies A, B, C in median nearest-neighbour spacings.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [20.0, 12.0, 12.0])]
    pub gaps: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["spec", "preset"])))]
pub struct RenderArgs {
    /// Scene description (JSON, or TOML with a `.toml` extension).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in scene family: `multi-target` or `interference`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output file stem (defaults to the spec stem or preset name).
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub common: Common,
}
