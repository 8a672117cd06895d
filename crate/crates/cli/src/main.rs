//! `lobrm`: ingest LOBSTER files, fit transforms, train and evaluate
//! reconstruction models, run the studies, simulate markets and replay
//! trade streams through a checkpoint.
//!
//! Results go to the output directory (`--out`, else `$LOBRM_OUT`, else
//! `out`) and are byte-identical across runs with the same inputs. Progress
//! with wall-clock timings goes to `run.log` there and to stderr. On failure
//! a JSON error object is printed to stdout and the exit code is 2 for
//! configuration errors, 3 for data errors and 4 for numeric errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lobrm_core::model::{Mode, Variant};
use lobrm_core::types::Side;
use lobrm_core::{Error, ErrorClass};

use crate::config::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "lobrm", version, about = "Limit order book volume reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse LOBSTER files into trade-time CSVs
    Ingest(Common),
    /// Fit clipping cut-points and standardization statistics
    FitStats(Common),
    /// Train a model on one side and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on the test day
    Eval(Common),
    /// Test loss of every ensemble mode
    Ablate(AblateArgs),
    /// Retrain with one, two and three training days
    SizeStudy(Common),
    /// Mid-price trend classification with three encodings
    Trend(Common),
    /// Write a seeded synthetic market in LOBSTER format
    Simulate(Common),
    /// Finite-difference check of model gradients
    Gradcheck(Common),
    /// Predict deep volumes at every trade of a trade-time CSV
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Manifest of LOBSTER files
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub side: Option<Side>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Zero and freeze the weighting branch of the full ensemble
    #[arg(long)]
    freeze_zero_ws: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    /// Trade-time CSV to stream
    #[arg(long)]
    input: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(c) => commands::ingest(&c),
        Command::FitStats(c) => commands::fit_stats(&c),
        Command::Train(a) => commands::train(&a.common, a.model),
        Command::Eval(c) => commands::eval(&c),
        Command::Ablate(a) => commands::ablate(&a.common, a.freeze_zero_ws),
        Command::SizeStudy(c) => commands::size_study(&c),
        Command::Trend(c) => commands::trend(&c),
        Command::Simulate(c) => commands::simulate(&c),
        Command::Gradcheck(c) => commands::gradcheck(&c),
        Command::Replay(a) => commands::replay(&a.common, a.input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let body = serde_json::json!({
                "error": {
                    "class": class_name(class),
                    "kind": e.kind(),
                    "message": e.to_string(),
                }
            });
            println!("{body}");
            ExitCode::from(exit_code(class))
        }
    }
}
