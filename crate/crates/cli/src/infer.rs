//! `wren infer`: offline classification of one WAV file.

use std::path::PathBuf;

use clap::Args;
use wren_core::archive::load_model_from;
use wren_core::streaming::offline_infer;
use wren_core::Result;

use crate::util;

#[derive(Args)]
pub struct InferArgs {
    /// Input WAV file (any sample rate; resampled to 32 kHz)
    wav: PathBuf,
    /// Trained model archive
    #[arg(long, default_value = "model.wmdl")]
    model: PathBuf,
    /// Number of top classes to print
    #[arg(long, default_value_t = 5)]
    top: usize,
}

pub fn run(args: &InferArgs) -> Result<()> {
    let model = load_model_from::<f32>(&args.model)?;
    let samples = util::load_audio_32k(&args.wav)?;
    let probs = offline_infer(&model, &samples)?;

    let names = util::class_names(&model.config);
    let mut ranked: Vec<(usize, f32)> = probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

    println!(
        "{}: {:.2} s at 32 kHz",
        args.wav.display(),
        samples.len() as f64 / 32_000.0
    );
    for &(idx, p) in ranked.iter().take(args.top.max(1)) {
        println!("{:<24} {:.4}", names[idx], p);
    }
    Ok(())
}
