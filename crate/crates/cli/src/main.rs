//! `icuau`: operator entry point for the AU detection pipeline.

mod cmd;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icuau_core::model::ModelError;
use icuau_core::tensor::TensorError;
use icuau_core::train::TrainError;

/// Bad flags, bad config or a missing required setting (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "icuau", version, about = "Facial action-unit detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schedule 15-minute segments around pain reports and list their frames
    Sample(SampleArgs),
    /// Align frames to the canonical template and write crops
    Align(AlignArgs),
    /// Train a model and write a checkpoint, a JSON-lines log and test metrics
    Train(TrainArgs),
    /// Compute per-AU F1 and accuracy for a checkpoint or a predictions file
    Eval(EvalArgs),
    /// Score a directory of aligned crops as JSON lines
    Infer(InferArgs),
    /// Tabulate AU presence by self-reported pain category
    Analyze(AnalyzeArgs),
    /// Print windowed and full attention MAC counts across token grids
    Bench(BenchArgs),
    /// Run the annotation API and console
    Serve(ServeArgs),
    /// Write procedurally generated face frames with known labels
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pain reports CSV (patient_id,reported_at,dvprs)
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Frame manifest CSV (frame_id,patient_id,captured_at,image_path)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Segment length in minutes
    #[arg(long, default_value_t = 15)]
    length_minutes: i64,
    /// Maximum distance from a report in minutes
    #[arg(long, default_value_t = 60)]
    radius_minutes: i64,
    /// Output file (JSON lines); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Landmarks CSV (frame_id,x0,y0,...,x67,y67)
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Root for relative image paths (defaults to the manifest's directory)
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output directory for {frame_id}.png crops
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persisted transform cache file
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Crop side in pixels (defaults to the model input size)
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Emulated data-parallel workers
    #[arg(long)]
    workers: Option<usize>,
    /// Shuffle and augmentation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Train on generated frames (data.synthetic settings)
    #[arg(long)]
    synthetic: bool,
    /// Continue from a checkpoint written with the same settings
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Start from a pretrained checkpoint's backbone with a fresh head
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// JSON lines with frame_id, probabilities and labels; replaces model scoring
    #[arg(long, conflicts_with = "checkpoint")]
    predictions: Option<PathBuf>,
    /// Presence threshold on probabilities
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    synthetic: bool,
    /// Report file (JSON); defaults to paths.metrics
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of aligned PNG/PPM crops
    #[arg(long)]
    frames: PathBuf,
    /// JSON lines with frame_id and PSPI AU intensities
    #[arg(long)]
    intensities: Option<PathBuf>,
    /// Output file (JSON lines); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttributionArg {
    PerReport,
    Nearest,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Annotation journal (JSON lines)
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    reports: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// How frames near several reports are counted
    #[arg(long, value_enum)]
    attribution: Option<AttributionArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Token grid sides to tabulate
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
    grids: Vec<usize>,
    /// Emit JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    reports: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Console directory (defaults to the bundled console)
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Disable permissive CORS headers
    #[arg(long)]
    no_cors: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sample(a) => cmd::sample::run(a),
        Command::Align(a) => cmd::align::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Infer(a) => cmd::infer::run(a),
        Command::Analyze(a) => cmd::analyze::run(a),
        Command::Bench(a) => cmd::bench::run(a),
        Command::Serve(a) => cmd::serve::run(a),
        Command::Synth(a) => cmd::synth::run(a),
    }
}

fn numeric_model_error(e: &ModelError) -> bool {
    matches!(
        e,
        ModelError::NanAttention | ModelError::Tensor(TensorError::NonFinite { .. })
    )
}

/// NaN/inf failures, looking through transparent wrappers.
fn is_numeric(cause: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(e) = cause.downcast_ref::<TrainError>() {
        return match e {
            TrainError::NonFiniteGradient(_) | TrainError::NonFiniteLoss | TrainError::NonFiniteOutput => true,
            TrainError::Model(m) => numeric_model_error(m),
            TrainError::Tensor(t) => matches!(t, TensorError::NonFinite { .. }),
            _ => false,
        };
    }
    if let Some(m) = cause.downcast_ref::<ModelError>() {
        return numeric_model_error(m);
    }
    matches!(cause.downcast_ref::<TensorError>(), Some(TensorError::NonFinite { .. }))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Config(_))) {
            return 1;
        }
        if is_numeric(cause) {
            return 3;
        }
    }
    2
}

/// The reader of our output went away (e.g. `icuau bench | head`).
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
