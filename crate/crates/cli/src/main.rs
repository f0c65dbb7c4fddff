//! `segdesc`: encode, decode, refine, evaluate, build instruction data and run
//! robustness sweeps from the command line.
//!
//! Exit codes: 0 success, 2 input I/O, 3 grammar or configuration, 4
//! prediction/ground-truth id mismatch, 5 refiner failure.

mod commands;
mod eval;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use segdesc::codec::{RepairPolicy, Scheme};
use segdesc::grid::{DownsamplePolicy, GridShape};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Core(#[from] segdesc::Error),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        use segdesc::Error as E;
        match self {
            Failure::Io(_) => 2,
            Failure::Config(_) => 3,
            Failure::Mismatch(_) => 4,
            Failure::Core(e) => match e {
                E::Io { .. } | E::Image { .. } => 2,
                E::Refiner { .. } => 5,
                _ => 3,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "segdesc", version, about = "Segmentation masks as text")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for dataset- and sweep-level parallelism.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode an index mask as descriptor text.
    Encode(EncodeArgs),
    /// Parse descriptor text back into an index mask.
    Decode(DecodeArgs),
    /// Refine a coarse binary mask.
    Refine(RefineArgs),
    /// Score predictions against a ground-truth manifest.
    Eval(EvalArgs),
    /// Generate instruction records from an annotation manifest.
    BuildData(BuildDataArgs),
    /// Robustness and resolution sweep on synthetic masks.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    /// Grid shape, `R` or `RxC`.
    #[arg(long, default_value = "16")]
    grid: GridShape,
    #[arg(long, default_value = "rrle")]
    scheme: Scheme,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    mask: PathBuf,
    /// JSON object mapping ids to labels.
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "majority")]
    policy: DownsamplePolicy,
    /// Wrap the body in the response template.
    #[arg(long)]
    wrap: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Bare body or a full response containing `<seg>…</seg>`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "pad-truncate")]
    repair: RepairPolicy,
    /// Upsample to this width (defaults to the grid width).
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RefinerKind {
    None,
    Crf,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdapterKind {
    Identity,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum, default_value = "crf")]
    refiner: RefinerKind,
    /// Built-in adapter for `--refiner external`.
    #[arg(long, value_enum, conflicts_with = "adapter_cmd")]
    adapter: Option<AdapterKind>,
    /// Program speaking the JSON adapter protocol on stdin/stdout.
    #[arg(long)]
    adapter_cmd: Option<String>,
    /// Extra argument for the adapter program; repeatable.
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    adapter_args: Vec<String>,
    /// Scratch directory for adapter exchange files (default: `<out>.work`).
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 10)]
    positives: usize,
    #[arg(long, default_value_t = 10)]
    negatives: usize,
    #[arg(long)]
    crf_bilateral_weight: Option<f64>,
    #[arg(long)]
    crf_spatial_stddev: Option<f64>,
    #[arg(long)]
    crf_color_stddev: Option<f64>,
    #[arg(long)]
    crf_gaussian_weight: Option<f64>,
    #[arg(long)]
    crf_gaussian_stddev: Option<f64>,
    #[arg(long)]
    crf_iterations: Option<usize>,
    #[arg(long)]
    crf_confidence: Option<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Res,
    Gres,
    Rec,
    Openvocab,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Ground-truth annotation manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of `<id>.png` masks or a JSONL file of response records.
    #[arg(long)]
    pred: PathBuf,
    /// Class vocabulary JSON (openvocab only).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Ground-truth value excluded from scoring (openvocab only).
    #[arg(long)]
    ignore: Option<u16>,
    /// Dataset name written to the report.
    #[arg(long, default_value = "dataset")]
    dataset: String,
    /// Only score manifest entries of this split.
    #[arg(long)]
    split: Option<String>,
    /// CSV report path (default: standard output).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write per-image scores as JSON to this path.
    #[arg(long)]
    per_image: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuildMode {
    Res,
    Openvocab,
}

#[derive(Debug, Args)]
struct BuildDataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "res")]
    mode: BuildMode,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "majority")]
    policy: DownsamplePolicy,
    /// Partial-kind templates, one per line.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    conditioned_templates: Option<PathBuf>,
    #[arg(long)]
    open_templates: Option<PathBuf>,
    /// Passes over the manifest (res mode).
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Class vocabulary JSON (openvocab mode).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// `open:partial:conditioned` template-kind weights.
    #[arg(long, default_value = "1:3:6")]
    ratio: segdesc::dataset::KindRatio,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Smallest crop side as a fraction of the image side.
    #[arg(long, default_value_t = 0.6)]
    crop_min: f64,
    #[arg(long)]
    no_crop: bool,
    #[arg(long, default_value_t = 3)]
    max_distractors: usize,
    #[arg(long)]
    ignore: Option<u16>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Refcoco,
    Objects,
    Regions,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,24,32")]
    grids: Vec<GridShape>,
    #[arg(long, value_delimiter = ',', default_value = "full,irle,rrle")]
    schemes: Vec<Scheme>,
    /// Noise multipliers applied to the rates below.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.4")]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    drop: f64,
    #[arg(long, default_value_t = 0.0)]
    count: f64,
    #[arg(long, default_value_t = 0.0)]
    truncate: f64,
    #[arg(long, default_value_t = 0.0)]
    swap: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value = "refcoco")]
    suite: Suite,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Side length of the synthetic masks.
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(short, long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Refine(a) => commands::refine(a, seed),
        Command::Eval(a) => eval::run(a),
        Command::BuildData(a) => commands::build_data(a, seed),
        Command::Sweep(a) => commands::sweep(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
