//! `wren export`: int8 post-training quantization with a calibration
//! pass, an SNR report, and a float-agreement check.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use wren_core::archive::load_model_from;
use wren_core::dataset::{read_wav, Manifest, Split};
use wren_core::quant::{quantize_int8, top1_agreement};
use wren_core::{Error, Result};

use crate::util::{self, SyntheticTask};

#[derive(Args)]
pub struct ExportArgs {
    /// Trained model archive to quantize
    #[arg(long, default_value = "model.wmdl")]
    model: PathBuf,
    /// Quantize weights to int8 (the only supported export)
    #[arg(long)]
    int8: bool,
    /// Prepared dataset directory providing calibration clips
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    calibration: Option<PathBuf>,
    /// Draw calibration clips from a built-in synthetic task instead
    #[arg(long, value_name = "TASK", value_parser = SyntheticTask::from_str)]
    synthetic: Option<SyntheticTask>,
    /// How many calibration clips to use
    #[arg(long, default_value_t = 32)]
    calibration_count: usize,
    /// Clip duration in seconds for synthetic calibration clips
    #[arg(long, default_value_t = 0.5)]
    clip_seconds: f64,
    /// Seed for synthetic calibration clips
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where the quantized archive is written
    #[arg(long, default_value = "model.wqnt")]
    output: PathBuf,
}

/// Collects calibration audio from a prepared dataset's train split.
fn calibration_from_dir(dir: &PathBuf, count: usize) -> Result<Vec<Vec<f32>>> {
    let manifest = Manifest::read(&dir.join("manifest.tsv"))?;
    let mut clips = Vec::new();
    for record in &manifest.records {
        if record.split != Split::Train {
            continue;
        }
        if clips.len() == count {
            break;
        }
        let audio = read_wav::<f32>(&dir.join(&record.clip))?;
        clips.push(audio.samples);
    }
    Ok(clips)
}

pub fn run(args: &ExportArgs) -> Result<()> {
    if !args.int8 {
        return Err(Error::config(
            "only int8 export is supported; pass --int8".to_string(),
        ));
    }
    let model = load_model_from::<f32>(&args.model)?;

    let clips: Vec<Vec<f32>> = if let Some(dir) = &args.calibration {
        calibration_from_dir(dir, args.calibration_count)?
    } else if let Some(task) = args.synthetic {
        let clip_len = util::clip_samples(args.clip_seconds, model.config.n_fft)?;
        // Every fifth generated clip lands in the validation split, so
        // oversize the task to leave enough on the training side.
        let per_class = args.calibration_count.div_ceil(2).max(2);
        let task = util::make_task(task, per_class, clip_len, args.seed);
        task.train
            .into_iter()
            .map(|item| item.samples)
            .take(args.calibration_count)
            .collect()
    } else {
        return Err(Error::config(
            "provide calibration audio: --calibration DIR or --synthetic TASK".to_string(),
        ));
    };

    let (quantized, report) = quantize_int8(&model, &clips)?;
    print!("{}", report.render());
    println!();
    println!("worst per-tensor snr: {:.1} dB", report.min_snr_db());

    let agreement = top1_agreement(&model, &quantized, &clips)?;
    println!(
        "top-1 agreement with float on {} calibration clips: {:.3}",
        clips.len(),
        agreement
    );

    quantized.write(&args.output)?;
    let bytes = std::fs::metadata(&args.output)?.len();
    println!("quantized model written to {} ({bytes} B)", args.output.display());
    Ok(())
}
