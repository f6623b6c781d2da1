//! Activity segmentation: locating vocalization peaks on the RMS
//! envelope, cutting fixed-length clips around them, and harvesting
//! `no_bird` material from quiet passages and ambient recordings.

use crate::dataset::dsp::{ENV_HOP, ENV_WINDOW};
use crate::error::{Error, Result};
use crate::num::{lit, Real};

/// Fixed clip length: 3 s at the 32 kHz target rate.
pub const CLIP_SAMPLES: usize = 96_000;
/// Minimum spacing between accepted peaks, in envelope steps (1 s).
pub const MIN_PEAK_DISTANCE: usize = 100;
/// Peaks must reach this percentile of candidate prominences.
pub const PROMINENCE_PERCENTILE: f64 = 75.0;
/// Envelope values below this percentile count as low-energy.
pub const LOW_ENERGY_PERCENTILE: f64 = 25.0;

/// Comparisons on envelope values use this relative slack so that
/// acoustically identical stretches register as flat. Library sine
/// evaluations are not bit-periodic (the phase argument rounds
/// differently as it grows), so even exactly repeated audio yields
/// last-ulp envelope jitter; differences below a billionth of the
/// envelope peak are treated as equal. Real acoustic contrasts are
/// many orders of magnitude larger.
const FLATNESS_REL_TOL: f64 = 1e-9;

fn flatness_tol<F: Real>(env: &[F]) -> F {
    let max = env.iter().fold(F::zero(), |m, &e| m.max(e.abs()));
    max * lit::<F>(FLATNESS_REL_TOL)
}

/// Linear-interpolation percentile (the numpy convention): rank
/// `p/100 * (n-1)` into the sorted values, interpolating between
/// neighbors.
pub fn percentile<F: Real>(values: &[F], p: f64) -> F {
    assert!(!values.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&p));
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in percentile input"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + lit::<F>(frac) * (sorted[lo + 1] - sorted[lo])
    }
}

/// A detected activity peak on the envelope grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak<F> {
    /// Envelope step index.
    pub index: usize,
    /// Acoustic center in samples: the center of the peak's window.
    pub sample: usize,
    pub height: F,
    pub prominence: F,
}

/// Local maxima of the envelope: strictly above the left neighbor and
/// at least as high as the right (up to the flatness slack), so a flat
/// plateau yields exactly one candidate at its first step. Endpoints
/// are not candidates.
fn local_maxima<F: Real>(env: &[F], tol: F) -> Vec<usize> {
    (1..env.len().saturating_sub(1))
        .filter(|&i| env[i] > env[i - 1] + tol && env[i] >= env[i + 1] - tol)
        .collect()
}

/// Topographic prominence: walk outward from the candidate until a
/// point higher than the candidate by more than the flatness slack (or
/// the signal edge), tracking the minimum seen on each side;
/// prominence is the height above the higher of the two minima.
fn prominence_at<F: Real>(env: &[F], i: usize, tol: F) -> F {
    let h = env[i];
    let mut left_min = h;
    let mut j = i;
    while j > 0 {
        j -= 1;
        if env[j] > h + tol {
            break;
        }
        left_min = left_min.min(env[j]);
    }
    let mut right_min = h;
    let mut j = i;
    while j + 1 < env.len() {
        j += 1;
        if env[j] > h + tol {
            break;
        }
        right_min = right_min.min(env[j]);
    }
    h - left_min.max(right_min)
}

/// Detects activity peaks: candidate local maxima whose prominence
/// reaches the 75th percentile of all candidate prominences, thinned so
/// accepted peaks sit at least `MIN_PEAK_DISTANCE` envelope steps
/// apart. Selection is greedy from the most prominent down, and the
/// result stays ordered by descending prominence (ties broken by
/// earlier position).
pub fn detect_peaks<F: Real>(env: &[F]) -> Vec<Peak<F>> {
    let tol = flatness_tol(env);
    let candidates = local_maxima(env, tol);
    if candidates.is_empty() {
        return Vec::new();
    }
    let proms: Vec<F> = candidates
        .iter()
        .map(|&i| prominence_at(env, i, tol))
        .collect();
    let threshold = percentile(&proms, PROMINENCE_PERCENTILE) - tol;

    let mut ranked: Vec<(usize, F)> = candidates
        .iter()
        .zip(&proms)
        .filter(|(_, &p)| p >= threshold)
        .map(|(&i, &p)| (i, p))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("NaN prominence")
            .then(a.0.cmp(&b.0))
    });

    let mut selected: Vec<Peak<F>> = Vec::new();
    for (i, p) in ranked {
        let far_enough = selected
            .iter()
            .all(|s| i.abs_diff(s.index) >= MIN_PEAK_DISTANCE);
        if far_enough {
            selected.push(Peak {
                index: i,
                sample: i * ENV_HOP + ENV_WINDOW / 2,
                height: env[i],
                prominence: p,
            });
        }
    }
    selected
}

/// Where an extracted clip came from within its source recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpan {
    pub start: usize,
    /// Samples of zero padding appended (only for short recordings).
    pub padding: usize,
}

/// Cuts a fixed-length clip centered on the given sample, shifting the
/// window inward at recording edges. Recordings shorter than a clip are
/// taken whole and zero-padded at the end. Always returns exactly
/// `CLIP_SAMPLES` samples.
pub fn extract_clip<F: Real>(samples: &[F], center: usize) -> (Vec<F>, ClipSpan) {
    if samples.len() <= CLIP_SAMPLES {
        let mut clip = samples.to_vec();
        let padding = CLIP_SAMPLES - clip.len();
        clip.resize(CLIP_SAMPLES, F::zero());
        return (clip, ClipSpan { start: 0, padding });
    }
    let max_start = samples.len() - CLIP_SAMPLES;
    let start = center.saturating_sub(CLIP_SAMPLES / 2).min(max_start);
    (
        samples[start..start + CLIP_SAMPLES].to_vec(),
        ClipSpan { start, padding: 0 },
    )
}

/// Fallback when no peak clears the bar: the first three seconds.
pub fn fallback_clip<F: Real>(samples: &[F]) -> (Vec<F>, ClipSpan) {
    extract_clip(samples, CLIP_SAMPLES / 2)
}

/// Standardizes arbitrary material to exactly one clip length: long
/// inputs are center-cropped, short ones zero-padded at the end.
pub fn standardize_clip<F: Real>(samples: &[F]) -> Vec<F> {
    if samples.len() >= CLIP_SAMPLES {
        let start = (samples.len() - CLIP_SAMPLES) / 2;
        samples[start..start + CLIP_SAMPLES].to_vec()
    } else {
        let mut clip = samples.to_vec();
        clip.resize(CLIP_SAMPLES, F::zero());
        clip
    }
}

/// Marks envelope steps counting as low-energy: strictly below the
/// 25th percentile of the file's own envelope (by more than the
/// flatness slack, so a uniformly loud file marks nothing). A
/// degenerate threshold of zero — an essentially silent file — marks
/// every step, since nothing can sit strictly below zero energy.
pub fn low_energy_mask<F: Real>(env: &[F]) -> Vec<bool> {
    let tau = percentile(env, LOW_ENERGY_PERCENTILE);
    if tau <= F::zero() {
        return vec![true; env.len()];
    }
    let bar = tau - flatness_tol(env);
    env.iter().map(|&e| e < bar).collect()
}

/// Maximal runs of consecutive `true` steps, as `[start, end)` index
/// pairs on the envelope grid.
pub fn mask_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len()));
    }
    runs
}

/// An ambient recording tagged with its scene category.
#[derive(Debug, Clone)]
pub struct AmbientClip<F> {
    pub category: String,
    pub samples: Vec<F>,
}

/// Provenance of a `no_bird` clip.
#[derive(Debug, Clone, PartialEq)]
pub enum NoBirdSource {
    /// Quiet passage of a labeled recording.
    LowEnergy { source: String, start: usize },
    /// Ambient scene recording used as-is.
    Ambient { category: String },
}

#[derive(Debug, Clone)]
pub struct NoBirdClip<F> {
    pub samples: Vec<F>,
    pub source: NoBirdSource,
}

/// Builds the `no_bird` class from two pools: low-energy passages of
/// the labeled recordings (each contiguous quiet run becomes one clip)
/// and ambient recordings whose category is not on the exclusion list.
/// Fails when both pools come up empty, since a classifier without
/// negative material silently degrades in the field.
pub fn synthesize_no_bird<F: Real>(
    recordings: &[(String, Vec<F>)],
    ambient: &[AmbientClip<F>],
    excluded_categories: &[&str],
) -> Result<Vec<NoBirdClip<F>>> {
    let mut clips = Vec::new();

    for (id, samples) in recordings {
        if samples.len() < ENV_WINDOW {
            continue;
        }
        let env = crate::dataset::dsp::compute_envelope(samples)?;
        let mask = low_energy_mask(&env);
        for (run_start, run_end) in mask_runs(&mask) {
            let lo = run_start * ENV_HOP;
            let hi = ((run_end - 1) * ENV_HOP + ENV_WINDOW).min(samples.len());
            clips.push(NoBirdClip {
                samples: standardize_clip(&samples[lo..hi]),
                source: NoBirdSource::LowEnergy {
                    source: id.clone(),
                    start: lo,
                },
            });
        }
    }

    for amb in ambient {
        if excluded_categories.iter().any(|ex| *ex == amb.category) {
            continue;
        }
        clips.push(NoBirdClip {
            samples: standardize_clip(&amb.samples),
            source: NoBirdSource::Ambient {
                category: amb.category.clone(),
            },
        });
    }

    if clips.is_empty() {
        return Err(Error::data(
            "no material for the no_bird class: no quiet passages and no usable ambient recordings",
        ));
    }
    Ok(clips)
}
