use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "scd", version, about = "Language-guided scene change detection toolkit")]
pub struct Cli {
    /// Settings file, .toml or .json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Store location; overrides SCD_DATA_ROOT and the settings file.
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair database images with their top-1 retrievals under the quarter and gap rules.
    Pair(PairArgs),
    /// Seeded train/val/test split of a pair manifest.
    Split(SplitArgs),
    /// Run the six-stage annotation pipeline over a pair manifest.
    Annotate(AnnotateArgs),
    /// Refine an initial mask with tracker and segmenter instances.
    Refine(RefineArgs),
    /// Train the change detection model on an exported dataset.
    Train(TrainArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Sweep one matching threshold over validation samples.
    Sweep(SweepArgs),
    /// Curation statistics for the review store.
    Stats(StatsArgs),
    /// Serve the review API.
    Serve(ServeArgs),
    /// Export accepted pairs as a dataset.
    Export(ExportArgs),
    /// Write a synthetic corpus with adapter fixtures.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// JSON list of database image records.
    #[arg(long)]
    pub database: PathBuf,
    /// JSON list of query image records.
    #[arg(long)]
    pub queries: PathBuf,
    /// JSON map from database id to [query id, score].
    #[arg(long)]
    pub retrievals: PathBuf,
    /// Pair manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_gap_days: Option<i64>,
    #[arg(long)]
    pub unique_queries: bool,
    /// Where to write rejected candidates; defaults next to the manifest.
    #[arg(long)]
    pub rejections: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SplitSizeArgs {
    /// Train, val and test fractions, e.g. 0.6,0.2,0.2.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Exact train, val and test counts, e.g. 5195,1299,1630.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Pair manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub sizes: SplitSizeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.txt, val.txt and test.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Pair manifest; relative image paths resolve against its directory.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Recorded adapter outputs.
    #[arg(long)]
    pub fixtures: PathBuf,
    /// Output directory; defaults to <data root>/runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub tau_cv: Option<f64>,
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Stop every pair after this stage (1-6).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub halt_after: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Initial mask PNG; any nonzero pixel is change.
    #[arg(long)]
    pub initial: PathBuf,
    /// Instance manifest of tracker masks.
    #[arg(long)]
    pub tracker: PathBuf,
    /// Instance manifest of segmenter masks.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub alpha_t: Option<f64>,
    #[arg(long)]
    pub alpha_g: Option<f64>,
    #[arg(long, value_enum)]
    pub keep_initial: Option<Switch>,
    /// Use >= instead of > when comparing overlap with the threshold.
    #[arg(long)]
    pub non_strict: bool,
    /// Refined binary mask PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Provenance JSON; defaults to <out>.provenance.json.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Exported dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = ["2", "4"], default_value = "4")]
    pub classes: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    /// Model config JSON; defaults to the toy configuration.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Checkpoint and trace directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Pooled,
    PerImage,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted mask PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth mask PNGs with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_parser = ["2", "4"], default_value = "4")]
    pub classes: String,
    #[arg(long, value_enum, default_value = "pooled")]
    pub averaging: AveragingArg,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_parser = ["geo", "sem", "geometric", "semantic"])]
    pub stage: String,
    /// Thresholds, e.g. 0.01,0.1,0.2,0.3.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    /// JSON list of sweep samples.
    #[arg(long)]
    pub samples: PathBuf,
    /// Value of the threshold that is held fixed.
    #[arg(long)]
    pub fixed: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Also write the stats as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    /// Built review UI assets.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub lease_timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sizes: SplitSizeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Export accepted pairs even while some are still pending.
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub pairs: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
