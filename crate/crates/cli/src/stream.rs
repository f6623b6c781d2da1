//! `wren stream`: chunked classification with a running prediction,
//! exercising the same fixed-memory path an embedded deployment uses.

use std::path::PathBuf;

use clap::Args;
use wren_core::archive::load_model_from;
use wren_core::dataset::TARGET_RATE;
use wren_core::streaming::{memory_report, StreamRuntime};
use wren_core::{Error, Result};

use crate::util;

#[derive(Args)]
pub struct StreamArgs {
    /// Input WAV file (any sample rate; resampled to 32 kHz)
    wav: PathBuf,
    /// Trained model archive
    #[arg(long, default_value = "model.wmdl")]
    model: PathBuf,
    /// Chunk duration in milliseconds
    #[arg(long, default_value_t = 200)]
    chunk_ms: u64,
}

pub fn run(args: &StreamArgs) -> Result<()> {
    if args.chunk_ms == 0 {
        return Err(Error::config("chunk duration must be at least 1 ms".to_string()));
    }
    let model = load_model_from::<f32>(&args.model)?;
    let report = memory_report(&model)?;
    let samples = util::load_audio_32k(&args.wav)?;
    let chunk_len = (TARGET_RATE as u64 * args.chunk_ms / 1000).max(1) as usize;

    let mut runtime = StreamRuntime::new(model)?;
    let mut state = runtime.open_stream(TARGET_RATE)?;
    println!(
        "streaming {} in {} ms chunks ({} samples); state {} B, working set {} B",
        args.wav.display(),
        args.chunk_ms,
        chunk_len,
        state.byte_size(),
        report.total()
    );

    for (i, chunk) in samples.chunks(chunk_len).enumerate() {
        let pred = runtime.process_chunk(&mut state, chunk)?;
        let t = (i + 1) as f64 * chunk_len as f64 / TARGET_RATE as f64;
        println!(
            "{t:>7.2} s  {:<24} {:.3}",
            pred.class_name, pred.probs[pred.class_index]
        );
    }

    let last = runtime.finalize(&mut state)?;
    println!(
        "final: {} ({:.3}) after {} frames",
        last.class_name,
        last.probs[last.class_index],
        state.frames_emitted()
    );
    Ok(())
}
