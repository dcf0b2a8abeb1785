//! Command-line harness for frozen feature augmentation experiments.

mod commands;
mod manifest;
mod output;
mod report;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "frofa",
    about = "Frozen feature augmentation experiments on cached vision-transformer features",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create, import, or inspect feature caches.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Train one head configuration across shots and replica seeds.
    Train(TrainArgs),
    /// Run the Cartesian hyperparameter sweep.
    Sweep(SweepArgs),
    /// Fit the closed-form linear probe with its lambda sweep.
    Probe(ProbeArgs),
    /// Evaluate a saved checkpoint on a cache.
    Eval(EvalArgs),
    /// Tabulate gains versus a baseline run and emit charts.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Generate a synthetic class-conditional Gaussian cache.
    Synth(SynthArgs),
    /// Import features and labels from npy arrays.
    Import(ImportArgs),
    /// Print a cache's manifest.
    Info { path: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: u32,
    #[arg(long, default_value_t = 30)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    c: usize,
    #[arg(long, default_value_t = 1.0)]
    cluster_scale: f32,
    #[arg(long, default_value_t = 0.25)]
    noise_scale: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "token_grid")]
    layout: String,
    #[arg(long)]
    split_name: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

/// Flags shared by the experiment commands; any value present in
/// `--manifest` is used unless the flag overrides it.
#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment manifest; flags override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    val_cache: Option<PathBuf>,
    #[arg(long)]
    test_cache: Option<PathBuf>,
    /// Comma-separated shot counts, e.g. `1,5,10,25`.
    #[arg(long)]
    shots: Option<String>,
    /// Replica seeds: `0..4` (inclusive) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Pipeline JSON file, or `none`.
    #[arg(long)]
    pipeline: Option<String>,
    /// Output directory; defaults to $FROFA_OUT, then `frofa_out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Experiment seed keying splits and training.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// `full` (100 configs) or `reduced` (8 configs).
    #[arg(long)]
    grid: Option<String>,
    /// `on` adds the 4-value weight-decay axis.
    #[arg(long)]
    weight_decay_axis: Option<String>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Disable the unpenalized intercept column.
    #[arg(long, default_value_t = false)]
    no_bias: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `head` or `probe`.
    #[arg(long, default_value = "head")]
    kind: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding summary CSVs from prior runs.
    #[arg(long)]
    metrics: PathBuf,
    /// Baseline run: a config hash (from the summary filename) or a
    /// pipeline id such as `none`.
    #[arg(long)]
    baseline: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
fn exit_class(error: &anyhow::Error) -> u8 {
    if let Some(library_error) = error.downcast_ref::<frofa::Error>() {
        use frofa::Error::*;
        match library_error {
            ShapeMismatch(_) | LabelOutOfRange { .. } | RankMismatch { .. }
            | UnsupportedDtype { .. } | NotEnoughExamples { .. } | InvalidAugmentation(_)
            | InvalidPipeline(_) | HeadCount { .. } | InvalidConfig(_) => 2,
            _ => 1,
        }
    } else if error.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

/// A user-input problem detected by the CLI layer itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Cache { command } => match command {
            CacheCommand::Synth(args) => commands::cache_synth(args),
            CacheCommand::Import(args) => commands::cache_import(args),
            CacheCommand::Info { path } => commands::cache_info(&path),
        },
        Command::Train(args) => commands::train(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Probe(args) => commands::probe(args),
        Command::Eval(args) => commands::eval(args),
        Command::Report(args) => report::report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(exit_class(&error))
        }
    }
}
