#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "byseer", version, about = "Content-type detection from file bytes")]
struct Cli {
    /// Worker threads for per-file work (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect the content type of files.
    Detect(DetectArgs),
    /// Train a model on a split manifest.
    Train(TrainArgs),
    /// Fit per-type thresholds on the validation split.
    Calibrate(CalibrateArgs),
    /// Score a model or an external tool on a labeled split.
    Eval(EvalArgs),
    /// Time a model or an external tool.
    Bench(BenchArgs),
    /// Build or synthesize corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file.
    #[arg(long, env = "BYSEER_MODEL")]
    model: PathBuf,
    /// Registry JSON the model's labels refer to (default: built-in).
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    model: ModelArg,
    /// One JSON object per file instead of tab-separated lines.
    #[arg(long)]
    json: bool,
    /// Report the plain argmax, ignoring calibrated thresholds.
    #[arg(long)]
    no_thresholds: bool,
    paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitSource {
    /// Manifest in JSON Lines form.
    #[arg(long)]
    manifest: PathBuf,
    /// Corpus root the manifest paths are relative to (default: the
    /// manifest's directory).
    #[arg(long)]
    root: Option<PathBuf>,
}

impl SplitSource {
    fn root(&self) -> PathBuf {
        self.root.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: SplitSource,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Registry JSON to draw labels from (default: built-in).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    cutmix_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    spatial_dropout: f64,
    /// Seeds weight initialization and every training random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a checkpoint every N epochs (0 = never).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Checkpoint directory (default: next to --out).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    data: SplitSource,
    #[arg(long, default_value = "val")]
    split: SplitArg,
    #[arg(long, default_value_t = byseer_core::calibrate::DEFAULT_TARGET_PRECISION)]
    target_precision: f64,
    /// Where to write the calibrated model (default: overwrite --model).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threshold table CSV (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for byseer_core::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Args)]
#[group(id = "subject", required = true, multiple = false)]
struct Subject {
    /// Model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// External tool command template with {file} or {files}.
    #[arg(long)]
    command: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    subject: Subject,
    /// Registry JSON (default: built-in).
    #[arg(long)]
    registry: Option<PathBuf>,
    #[command(flatten)]
    data: SplitSource,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    /// Normalization rules JSON mapping tool output to labels.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Ignore calibrated thresholds.
    #[arg(long)]
    no_thresholds: bool,
    /// Directory for per_type.csv and summary.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Per-invocation timeout for external tools, in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Batch,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    subject: Subject,
    /// Registry JSON (default: built-in).
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value_t = byseer_core::evalbench::DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = byseer_core::evalbench::DEFAULT_WARMUPS)]
    warmups: usize,
    #[arg(long, value_enum, default_value = "batch")]
    mode: ModeArg,
    /// Time the model inside this process instead of spawning `byseer detect`.
    #[arg(long)]
    in_process: bool,
    /// Timing JSON output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-invocation timeout for external tools, in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Files or directories of samples.
    paths: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Write a synthetic toy corpus of eight easily separable types.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        per_type: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate a root/<label>/ tree into a manifest, optionally split.
    Build {
        #[arg(long)]
        root: PathBuf,
        /// Manifest output (default: root/manifest.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rejects output (default: next to the manifest).
        #[arg(long)]
        rejects: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Per-type TRAIN/VAL/TEST counts, e.g. 300/100/100.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum samples per type before splitting fails.
        #[arg(long, default_value_t = 1)]
        floor: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Train(a) => commands::train(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Corpus(c) => commands::corpus(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::PartialFailure(_)) {
                eprintln!("byseer: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
