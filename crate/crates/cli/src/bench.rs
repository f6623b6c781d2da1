//! `wren bench`: wall-clock timing of the major pipeline stages plus
//! the memory accounting for one live stream.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use clap::Args;
use wren_core::archive::load_model_from;
use wren_core::dataset::{chirp, TARGET_RATE};
use wren_core::frontend::Frontend;
use wren_core::model::ModelParams;
use wren_core::streaming::{memory_report, offline_logits, StreamRuntime};
use wren_core::{Error, Result};

use crate::util::{self, Arch};

#[derive(Args)]
pub struct BenchArgs {
    /// Architecture preset to time: toy|full
    #[arg(long, default_value = "full", value_parser = Arch::from_str)]
    arch: Arch,
    /// Trained model archive to time instead of a fresh random model
    #[arg(long, conflicts_with = "arch")]
    model: Option<PathBuf>,
    /// Timing repetitions per stage (median is reported)
    #[arg(long, default_value_t = 10)]
    iterations: usize,
}

fn median(mut times: Vec<Duration>) -> Duration {
    times.sort();
    times[times.len() / 2]
}

fn time_stage(iterations: usize, mut f: impl FnMut() -> Result<()>) -> Result<Duration> {
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed());
    }
    Ok(median(times))
}

fn row(stage: &str, time: Duration) {
    println!("{stage:<28} {:>10.3} ms", time.as_secs_f64() * 1e3);
}

pub fn run(args: &BenchArgs) -> Result<()> {
    if args.iterations == 0 {
        return Err(Error::config("need at least one timing iteration".to_string()));
    }
    let model = match &args.model {
        Some(path) => load_model_from::<f32>(path)?,
        None => {
            let config = util::model_config(
                args.arch,
                match args.arch {
                    Arch::Toy => vec!["a".into(), "b".into()],
                    Arch::Full => (0..70).map(|i| format!("species_{i:02}")).collect(),
                },
                wren_core::frontend::FrontendKind::SemiLearnable,
            );
            ModelParams::init(&config, 0)?
        }
    };

    // A deterministic 3 s test clip: an upward sweep through the band.
    let clip: Vec<f32> = chirp(500.0, 8000.0, TARGET_RATE, 3 * TARGET_RATE as usize, 0.3);
    let chunk_len = TARGET_RATE as usize / 5; // 200 ms

    let report = memory_report(&model)?;
    println!(
        "model: {} bins, {} classes, {} trainable parameters",
        model.config.n_bins,
        model.config.num_classes(),
        model.parameter_count()
    );
    println!();

    let params = model.filterbank_params();
    let frontend_t = time_stage(args.iterations, || {
        let mut fe = Frontend::from_params(&params)?;
        let _ = fe.forward_signal(&clip);
        Ok(())
    })?;

    let offline_t = time_stage(args.iterations, || {
        offline_logits(&model, &clip).map(drop)
    })?;

    let mut runtime = StreamRuntime::new(model)?;
    let stream_t = time_stage(args.iterations, || {
        let mut state = runtime.open_stream(TARGET_RATE)?;
        for chunk in clip.chunks(chunk_len) {
            runtime.process_chunk(&mut state, chunk)?;
        }
        runtime.finalize(&mut state).map(drop)
    })?;

    // Steady-state cost of one 200 ms chunk, measured mid-stream.
    let mut state = runtime.open_stream(TARGET_RATE)?;
    runtime.process_chunk(&mut state, &clip[..TARGET_RATE as usize])?;
    let chunk_t = time_stage(args.iterations, || {
        runtime
            .process_chunk(&mut state, &clip[..chunk_len])
            .map(drop)
    })?;

    println!("stage                               median");
    row("frontend, 3 s clip", frontend_t);
    row("offline inference, 3 s clip", offline_t);
    row("streaming, 3 s in 200 ms", stream_t);
    row("one 200 ms chunk", chunk_t);
    println!(
        "real-time factor (offline): {:.0}x",
        3.0 / offline_t.as_secs_f64()
    );
    println!();
    println!("memory for one live stream:");
    println!("  parameters     {:>8} B", report.param_bytes);
    println!("  stream state   {:>8} B", report.state_bytes);
    println!("  conv scratch   {:>8} B", report.scratch_bytes);
    println!("  fft workspace  {:>8} B", report.stft_bytes);
    println!("  total          {:>8} B", report.total());
    Ok(())
}
