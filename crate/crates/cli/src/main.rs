//! `sedimask` — scene generation, mask training and inference, fusion,
//! sediment estimation, and pipeline benchmarking from one binary.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error (missing or malformed
//! inputs), 4 numeric failure (degenerate statistics, diverged training).
//! Failures print exactly one JSON line to stderr:
//! `{"error":"<kind>","message":"..."}`.

mod commands;
mod dataset;

use clap::Parser;

use sedimask_core::bench::memory::MeteredAllocator;
use sedimask_core::Error;

// Route every allocation through the metering wrapper so `bench` reports
// allocator-accurate peak memory instead of the RSS fallback.
#[global_allocator]
static ALLOCATOR: MeteredAllocator = MeteredAllocator;

#[derive(Debug)]
pub enum CliError {
    /// Arguments parsed but are not usable together (exit 2).
    Usage(String),
    /// The core library rejected the inputs or the numerics failed
    /// (exit 3, or 4 when [`Error::is_numeric`]).
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::from(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "sedimask",
    version,
    about = "Satellite scene masking and suspended-sediment estimation toolkit",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Generate a directory of synthetic labelled scenes
    Gen(commands::gen::GenArgs),
    /// Train the five-head mask model (or one single-mask model)
    Train(commands::train::TrainArgs),
    /// Predict mask sets for every scene with a trained checkpoint
    Predict(commands::predict::PredictArgs),
    /// Water masks from the MNDWI index with Otsu or selected thresholds
    Baseline(commands::baseline::BaselineArgs),
    /// Fuse mask sets into per-scene good-water planes
    Fuse(commands::fuse::FuseArgs),
    /// Fit, apply, or score the sediment-concentration ensemble
    #[command(subcommand)]
    Ssc(commands::ssc::SscCmd),
    /// Score predicted mask sets against labels
    Eval(commands::eval::EvalArgs),
    /// Time the standard and multi-task pipelines over a scene set
    Bench(commands::bench::BenchArgs),
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::MalformedHeader(_) => "malformed_header",
        Error::TruncatedPayload { .. } => "truncated_payload",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::BadInput(_) => "bad_input",
        Error::Degenerate(_) => "degenerate",
        Error::Diverged(_) => "diverged",
    }
}

fn main() {
    let cli = Cli::parse(); // clap itself exits 2 on unknown flags or subcommands
    let result = match cli.command {
        Command::Gen(args) => commands::gen::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Predict(args) => commands::predict::run(&args),
        Command::Baseline(args) => commands::baseline::run(&args),
        Command::Fuse(args) => commands::fuse::run(&args),
        Command::Ssc(cmd) => commands::ssc::run(&cmd),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Bench(args) => commands::bench::run(&args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(message)) => {
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": message }));
            std::process::exit(2);
        }
        Err(CliError::Core(e)) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": error_kind(&e), "message": e.to_string() })
            );
            std::process::exit(if e.is_numeric() { 4 } else { 3 });
        }
    }
}
