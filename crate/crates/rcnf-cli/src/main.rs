//! Command-line surface for the Random CapsNet Forest pipeline: convert raw
//! binaries to images, split a corpus, train a bagged ensemble, predict,
//! evaluate, inspect layouts, and sample the squash curve.
//!
//! Diagnostics go to stderr; data goes to files or stdout. Exit code is 0 on
//! success and nonzero on any failure.

mod commands;
mod config;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "rcnf",
    version,
    about = "Random CapsNet Forest: bagged capsule-network classifiers \
             over grayscale images derived from binary files"
)]
struct Cli {
    /// TOML file supplying defaults for the long options; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert raw binary files into grayscale PGM images.
    Convert(ConvertArgs),
    /// Assign a labelled corpus to train/val/test splits and write a manifest.
    Split(SplitArgs),
    /// Train a bagged capsule-network ensemble from a manifest.
    Train(TrainArgs),
    /// Write per-sample class predictions for one split.
    Predict(PredictArgs),
    /// Score an ensemble on one split and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Print per-layer and total parameter counts for a model layout.
    Inspect(InspectArgs),
    /// Sample the squash nonlinearity and its derivative over a range.
    SquashCurve(SquashCurveArgs),
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Directory of raw input files.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Directory receiving one PGM per input file, relative paths preserved.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Descend into subdirectories.
    #[arg(long)]
    recurse: bool,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Corpus directory with one subdirectory per class.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Manifest file to write; class names go to a sibling `.classes` file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Train, validation, and test fractions; must sum to 1.
    #[arg(long, value_name = "R1,R2,R3", default_value = "0.7,0.15,0.15")]
    ratios: String,
    /// Shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pair two images per sample by the filename stem before the first dot.
    #[arg(long)]
    dual_input: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Model layout: "malimg", "big2015", or a TOML layout file.
    #[arg(long, value_name = "NAME|FILE")]
    spec: Option<String>,
    /// Dataset manifest written by `rcnf split`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Ensemble size.
    #[arg(long, value_name = "N")]
    estimators: Option<usize>,
    /// Training epochs per estimator.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Master seed; per-estimator seeds derive from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for checkpoints, training log, and config echo.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the layout's reconstruction decoder switch.
    #[arg(long, value_name = "BOOL")]
    reconstruction: Option<bool>,
    /// Estimators trained in parallel; 1 keeps runs bit-reproducible.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Trained ensemble directory.
    #[arg(long, value_name = "DIR")]
    ensemble: PathBuf,
    /// Dataset manifest written by `rcnf split`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Split to predict: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Predictions CSV; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Minibatch size.
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Trained ensemble directory.
    #[arg(long, value_name = "DIR")]
    ensemble: PathBuf,
    /// Dataset manifest written by `rcnf split`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory receiving the confusion matrix and summary.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// F-score averaging reported on stdout: macro, micro, or weighted.
    #[arg(long, value_name = "MODE")]
    averaging: Option<String>,
    /// Minibatch size.
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Model layout: "malimg", "big2015", or a TOML layout file.
    #[arg(long, value_name = "NAME|FILE")]
    spec: Option<String>,
    /// Override the layout's reconstruction decoder switch.
    #[arg(long, value_name = "BOOL")]
    reconstruction: Option<bool>,
}

#[derive(Debug, Args)]
struct SquashCurveArgs {
    /// Lower end of the sampled range.
    #[arg(long, default_value_t = 0.0)]
    s_min: f64,
    /// Upper end of the sampled range.
    #[arg(long, default_value_t = 10.0)]
    s_max: f64,
    /// Number of uniform samples.
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Curve CSV; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Convert(args) => commands::convert(args, &file),
        Command::Split(args) => commands::split(args, &file),
        Command::Train(args) => commands::train(args, &file),
        Command::Predict(args) => commands::predict(args, &file),
        Command::Evaluate(args) => commands::evaluate(args, &file),
        Command::Inspect(args) => commands::inspect(args, &file),
        Command::SquashCurve(args) => commands::squash_curve(args, &file),
    }
}
