//! Preprocessing pipeline: raw field recordings in, fixed-length
//! labeled training clips out.
//!
//! Stages: decode and normalize audio ([`io`], [`dsp`]), find
//! vocalization peaks on the RMS envelope and cut 3 s clips around
//! them ([`segment`]), harvest `no_bird` negatives from quiet passages
//! and ambient scenes, and record everything in a versioned manifest.
//! [`synth`] generates deterministic synthetic material for tests and
//! demos.

pub mod dsp;
pub mod io;
pub mod segment;
pub mod synth;

use sha2::{Digest, Sha256};

pub use dsp::{
    compute_envelope, resample, resample_and_filter, Highpass, ENV_HOP, ENV_WINDOW, HIGHPASS_HZ,
    TARGET_RATE,
};
pub use io::{
    decode_wav, encode_wav, read_wav, write_wav, Audio, ClipRecord, Manifest, SoftLabels, Split,
};
pub use segment::{
    detect_peaks, extract_clip, fallback_clip, low_energy_mask, percentile, standardize_clip,
    synthesize_no_bird, AmbientClip, ClipSpan, NoBirdClip, NoBirdSource, Peak, CLIP_SAMPLES,
    MIN_PEAK_DISTANCE,
};
pub use synth::{burst_fixture, chirp, high_band_task, tone, tones_and_chirps, SynthTask};

use crate::error::{Error, Result};
use crate::num::Real;

/// A labeled source recording at its native sample rate.
#[derive(Debug, Clone)]
pub struct Recording<F> {
    pub id: String,
    pub label: String,
    pub samples: Vec<F>,
    pub sample_rate: u32,
}

/// An ambient scene recording at its native sample rate.
#[derive(Debug, Clone)]
pub struct AmbientRecording<F> {
    pub category: String,
    pub samples: Vec<F>,
    pub sample_rate: u32,
}

/// A finished clip: audio plus its manifest entry.
#[derive(Debug, Clone)]
pub struct PreparedClip<F> {
    pub samples: Vec<F>,
    pub record: ClipRecord,
}

/// Deterministic split assignment from a stable identifier: roughly a
/// fifth of sources go to validation. Hashing the source (rather than
/// the clip) keeps every clip of one recording in the same split, so
/// validation scores are not inflated by near-duplicate material.
pub fn assign_split(source_id: &str) -> Split {
    let digest = Sha256::digest(source_id.as_bytes());
    if digest[0] < 51 {
        Split::Val
    } else {
        Split::Train
    }
}

/// Runs the full preparation pipeline in memory.
///
/// Every recording is resampled to 32 kHz and highpass-filtered, clips
/// are cut around detected activity peaks (falling back to the first
/// three seconds when nothing clears the prominence bar), and the
/// `no_bird` class is assembled from quiet passages plus ambient
/// recordings not on the exclusion list.
pub fn prepare_recordings<F: Real>(
    recordings: &[Recording<F>],
    ambient: &[AmbientRecording<F>],
    excluded_categories: &[&str],
    species: &[String],
) -> Result<(Manifest, Vec<PreparedClip<F>>)> {
    if species.is_empty() {
        return Err(Error::config("species list is empty"));
    }
    if recordings.is_empty() {
        return Err(Error::data("no recordings to prepare"));
    }
    let mut manifest = Manifest::new(species.to_vec());
    let mut clips: Vec<PreparedClip<F>> = Vec::new();

    let mut processed: Vec<(String, Vec<F>)> = Vec::new();
    for rec in recordings {
        if !species.contains(&rec.label) {
            return Err(Error::data(format!(
                "recording {} has unknown label {:?}",
                rec.id, rec.label
            )));
        }
        let norm = resample_and_filter(&rec.samples, rec.sample_rate)?;
        let split = assign_split(&rec.id);

        let peaks = if norm.len() >= dsp::ENV_WINDOW {
            detect_peaks(&compute_envelope(&norm)?)
        } else {
            Vec::new()
        };

        let mut cut = |center: Option<&Peak<F>>, k: usize| {
            let (samples, span) = match center {
                Some(p) => extract_clip(&norm, p.sample),
                None => fallback_clip(&norm),
            };
            let record = ClipRecord {
                clip: format!("clips/{}_{k:02}.wav", rec.id),
                source: rec.id.clone(),
                start: span.start as u64,
                label: rec.label.clone(),
                split,
                prominence: center.map_or(0.0, |p| p.prominence.to_f64().unwrap_or(0.0)),
            };
            clips.push(PreparedClip { samples, record });
        };

        if peaks.is_empty() {
            cut(None, 0);
        } else {
            for (k, p) in peaks.iter().enumerate() {
                cut(Some(p), k);
            }
        }
        processed.push((rec.id.clone(), norm));
    }

    let ambient_processed: Vec<AmbientClip<F>> = ambient
        .iter()
        .map(|a| {
            Ok(AmbientClip {
                category: a.category.clone(),
                samples: resample_and_filter(&a.samples, a.sample_rate)?,
            })
        })
        .collect::<Result<_>>()?;
    let negatives = synthesize_no_bird(&processed, &ambient_processed, excluded_categories)?;
    for (k, neg) in negatives.into_iter().enumerate() {
        let (source, start, split) = match &neg.source {
            NoBirdSource::LowEnergy { source, start } => {
                (source.clone(), *start as u64, assign_split(source))
            }
            NoBirdSource::Ambient { category } => {
                let id = format!("ambient/{category}_{k}");
                (id.clone(), 0, assign_split(&id))
            }
        };
        let record = ClipRecord {
            clip: format!("clips/no_bird_{k:03}.wav"),
            source,
            start,
            label: "no_bird".into(),
            split,
            prominence: 0.0,
        };
        clips.push(PreparedClip { samples: neg.samples, record });
    }

    manifest.records = clips.iter().map(|c| c.record.clone()).collect();
    Ok((manifest, clips))
}
