//! `wren`: dataset preparation, training, inference, streaming,
//! quantized export, and diagnostics for the bird-audio classifier.
//!
//! Every subcommand exits 0 on success. Failures map the library error
//! categories to stable exit codes so scripts can distinguish them:
//! 2 configuration or usage, 3 data, 4 model archive, 5 I/O,
//! 6 internal numeric/shape errors.

use clap::{Parser, Subcommand};
use std::process::ExitCode;

mod bench;
mod dump;
mod export;
mod infer;
mod prep;
mod stream;
mod train;
mod util;

#[derive(Parser)]
#[command(
    name = "wren",
    version,
    about = "Streaming bird-audio classifier with a learnable spectral frontend"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut raw labeled recordings into 3 s training clips plus a manifest
    Prep(prep::PrepArgs),
    /// Train a model on prepared clips or a built-in synthetic task
    Train(Box<train::TrainArgs>),
    /// Classify one WAV file offline and print class probabilities
    Infer(infer::InferArgs),
    /// Classify a WAV file chunk by chunk with a running prediction
    Stream(stream::StreamArgs),
    /// Quantize a trained model to int8 and write a compact archive
    Export(export::ExportArgs),
    /// Time the major pipeline stages of a model
    Bench(bench::BenchArgs),
    /// Print the filterbank geometry as a tab-separated table
    DumpFilterbank(dump::DumpArgs),
}

/// Exit code for a failed run; `0` is reserved for success and `1` is
/// deliberately unused so accidental `panic!` aborts stay recognizable.
fn exit_code(err: &wren_core::Error) -> u8 {
    use wren_core::Error;
    match err {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Archive(_) | Error::Checksum | Error::Version { .. } => 4,
        Error::Io(_) => 5,
        Error::Domain(_) | Error::Shape(_) | Error::Numeric(_) => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prep(args) => prep::run(args),
        Command::Train(args) => train::run(args),
        Command::Infer(args) => infer::run(args),
        Command::Stream(args) => stream::run(args),
        Command::Export(args) => export::run(args),
        Command::Bench(args) => bench::run(args),
        Command::DumpFilterbank(args) => dump::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
