//! Helpers shared by the subcommands: audio loading at the model rate,
//! architecture presets, and synthetic-task selection.

use std::path::Path;
use std::str::FromStr;

use wren_core::dataset::{read_wav, resample, tones_and_chirps, high_band_task, SynthTask, TARGET_RATE};
use wren_core::frontend::FrontendKind;
use wren_core::model::ModelConfig;
use wren_core::{Error, Result};

/// Reads a WAV file and resamples it to 32 kHz when necessary.
pub fn load_audio_32k(path: &Path) -> Result<Vec<f32>> {
    let audio = read_wav::<f32>(path)?;
    if audio.samples.is_empty() {
        return Err(Error::data(format!("{}: no audio samples", path.display())));
    }
    if audio.sample_rate == TARGET_RATE {
        Ok(audio.samples)
    } else {
        Ok(resample(&audio.samples, audio.sample_rate, TARGET_RATE))
    }
}

/// Model size preset selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Small model for synthetic tasks and quick experiments.
    Toy,
    /// Deployment configuration (~133k parameters).
    Full,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Arch::Toy),
            "full" => Ok(Arch::Full),
            other => Err(Error::config(format!(
                "unknown architecture {other:?}; expected toy|full"
            ))),
        }
    }
}

/// Builds the architecture preset for the given species list and
/// filterbank kind.
pub fn model_config(arch: Arch, species: Vec<String>, frontend: FrontendKind) -> ModelConfig {
    let mut config = match arch {
        Arch::Toy => ModelConfig::toy(species),
        Arch::Full => ModelConfig::full(species),
    };
    config.frontend = frontend;
    config
}

/// Built-in synthetic task selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Three well-separated classes: low tone, mid chirp, noise.
    TonesAndChirps,
    /// Classes that differ only in a narrow band around 10 kHz.
    HighBand,
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tones-and-chirps" => Ok(SyntheticTask::TonesAndChirps),
            "high-band" => Ok(SyntheticTask::HighBand),
            other => Err(Error::config(format!(
                "unknown synthetic task {other:?}; expected tones-and-chirps|high-band"
            ))),
        }
    }
}

/// Generates the selected task with `per_class` clips per class.
pub fn make_task(
    kind: SyntheticTask,
    per_class: usize,
    clip_len: usize,
    seed: u64,
) -> SynthTask<f32> {
    match kind {
        SyntheticTask::TonesAndChirps => tones_and_chirps(per_class, clip_len, seed),
        SyntheticTask::HighBand => high_band_task(per_class, clip_len, seed, 9500.0, 10_500.0),
    }
}

/// Converts a clip duration in seconds to samples, rejecting clips too
/// short for a single analysis window.
pub fn clip_samples(seconds: f64, n_fft: usize) -> Result<usize> {
    if !seconds.is_finite() || seconds <= 0.0 {
        return Err(Error::config("clip duration must be positive".to_string()));
    }
    let len = (seconds * TARGET_RATE as f64).round() as usize;
    if len < n_fft {
        return Err(Error::config(format!(
            "clip duration {seconds} s is shorter than one {n_fft}-sample analysis window"
        )));
    }
    Ok(len)
}

/// Class names in classifier output order: species, then `no_bird`.
pub fn class_names(config: &ModelConfig) -> Vec<String> {
    let mut names = config.species.clone();
    names.push("no_bird".to_string());
    names
}
