//! Log/linear frequency warping blended by a parametrized sigmoid.
//!
//! A normalized coordinate `x in [0,1]` is mapped to a frequency in
//! `[f_min, f_max]`. Two reference mappings exist: logarithmic
//! (`f_min * (f_max/f_min)^x`) and linear. A sigmoid in `x`, positioned
//! by the breakpoint `b` (Hz) and sharpened by the transition width `w`,
//! blends them. Large `w` approaches a hard log-to-linear switch at `b`;
//! `w = 0` is a uniform 50/50 blend.

use crate::error::{Error, Result};
use crate::num::{lit, sigmoid, Real};

/// Lower clamp margin for the breakpoint, in Hz.
pub const BREAKPOINT_MARGIN_HZ: f64 = 1.0;
/// Transition-width clamp range.
pub const WIDTH_FLOOR: f64 = 1e-3;
pub const WIDTH_CEIL: f64 = 1e6;

/// Geometry and learnable parameters of the warped filterbank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankParams<F> {
    /// Breakpoint frequency in Hz (learnable).
    pub breakpoint: F,
    /// Transition width, dimensionless sigmoid sharpness (learnable).
    pub width: F,
    pub f_min: F,
    pub f_max: F,
    /// Number of filter bins.
    pub n_bins: usize,
    /// FFT size in samples; must be a power of two.
    pub n_fft: usize,
    /// Hop length in samples.
    pub hop: usize,
    /// Sample rate in Hz.
    pub sample_rate: u32,
}

impl<F: Real> FilterbankParams<F> {
    /// Default configuration: 64 bins over 150 Hz..16 kHz at 32 kHz,
    /// 512-point FFT with 320-sample hop, breakpoint 8 kHz, width 200.
    pub fn default_config() -> Self {
        FilterbankParams {
            breakpoint: lit(8000.0),
            width: lit(200.0),
            f_min: lit(150.0),
            f_max: lit(16000.0),
            n_bins: 64,
            n_fft: 512,
            hop: 320,
            sample_rate: 32_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = lit::<F>(self.sample_rate as f64 / 2.0);
        if !(self.f_min > F::zero()) {
            return Err(Error::config("f_min must be positive"));
        }
        if !(self.f_min < self.f_max) {
            return Err(Error::config("f_min must be below f_max"));
        }
        if self.f_max > nyquist {
            return Err(Error::config("f_max exceeds the Nyquist frequency"));
        }
        if self.n_bins < 2 {
            return Err(Error::config("need at least 2 filter bins"));
        }
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::config("n_fft must be a power of two"));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::config("hop must satisfy 0 < hop <= n_fft"));
        }
        Ok(())
    }

    /// Number of one-sided spectrum bins, `n_fft/2 + 1`.
    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn nyquist(&self) -> F {
        lit::<F>(self.sample_rate as f64) / lit::<F>(2.0)
    }

    /// Normalized grid coordinate `x_i = i / (n - 1)`.
    pub fn grid_coord(&self, i: usize) -> F {
        F::from_usize(i).unwrap() / F::from_usize(self.n_bins - 1).unwrap()
    }

    /// Clamps the learnable pair into their admissible ranges. Applied
    /// after every optimizer step.
    pub fn clamp_learnable(&mut self) {
        let lo = self.f_min + lit(BREAKPOINT_MARGIN_HZ);
        let hi = self.f_max - lit(BREAKPOINT_MARGIN_HZ);
        self.breakpoint = self.breakpoint.max(lo).min(hi);
        self.width = self.width.max(lit(WIDTH_FLOOR)).min(lit(WIDTH_CEIL));
    }

    fn check_domain(x: F) -> Result<()> {
        if x < F::zero() || x > F::one() {
            return Err(Error::domain(format!(
                "warp coordinate {x:?} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Logarithmic mapping `f_min * (f_max/f_min)^x`. Endpoints are exact.
pub fn warp_log<F: Real>(x: F, p: &FilterbankParams<F>) -> Result<F> {
    FilterbankParams::check_domain(x)?;
    Ok(warp_log_unchecked(x, p))
}

pub(crate) fn warp_log_unchecked<F: Real>(x: F, p: &FilterbankParams<F>) -> F {
    if x == F::zero() {
        p.f_min
    } else if x == F::one() {
        p.f_max
    } else {
        p.f_min * (p.f_max / p.f_min).powf(x)
    }
}

/// Linear mapping `f_min + x (f_max - f_min)`. Endpoints are exact.
pub fn warp_linear<F: Real>(x: F, p: &FilterbankParams<F>) -> Result<F> {
    FilterbankParams::check_domain(x)?;
    Ok(warp_linear_unchecked(x, p))
}

pub(crate) fn warp_linear_unchecked<F: Real>(x: F, p: &FilterbankParams<F>) -> F {
    if x == F::zero() {
        p.f_min
    } else if x == F::one() {
        p.f_max
    } else {
        p.f_min + x * (p.f_max - p.f_min)
    }
}

/// Sigmoid blend weight `S(x; b, w)`. Saturates, never NaN.
pub fn sigmoid_weight<F: Real>(x: F, p: &FilterbankParams<F>) -> F {
    let span = p.f_max - p.f_min;
    let x_break = (p.breakpoint - p.f_min) / span;
    sigmoid((x - x_break) * p.width)
}

/// Sigmoid-weighted convex combination of the log and linear mappings.
///
/// Computed as `f_log + S * (f_linear - f_log)` so both endpoints are
/// exact for any `(b, w)`.
pub fn warp_combined<F: Real>(x: F, p: &FilterbankParams<F>) -> Result<F> {
    FilterbankParams::check_domain(x)?;
    Ok(warp_combined_unchecked(x, p))
}

pub(crate) fn warp_combined_unchecked<F: Real>(x: F, p: &FilterbankParams<F>) -> F {
    let f_lg = warp_log_unchecked(x, p);
    let f_ln = warp_linear_unchecked(x, p);
    let s = sigmoid_weight(x, p);
    f_lg + s * (f_ln - f_lg)
}

/// Combined warp plus its partial derivatives with respect to the
/// breakpoint and the transition width.
pub fn warp_combined_grad<F: Real>(x: F, p: &FilterbankParams<F>) -> (F, F, F) {
    let f_lg = warp_log_unchecked(x, p);
    let f_ln = warp_linear_unchecked(x, p);
    let span = p.f_max - p.f_min;
    let x_break = (p.breakpoint - p.f_min) / span;
    let s = sigmoid((x - x_break) * p.width);
    let gap = f_ln - f_lg;
    let ds = s * (F::one() - s);
    let df_db = gap * ds * (-p.width / span);
    let df_dw = gap * ds * (x - x_break);
    (f_lg + s * gap, df_db, df_dw)
}

/// Discrete FFT bin index for each grid coordinate:
/// `clip(floor(f(x_i)/f_nyq * n_fft/2), 1, n_fft/2 - 2)`.
pub fn compute_bin_indices<F: Real>(p: &FilterbankParams<F>) -> Vec<usize> {
    let half = p.n_fft / 2;
    let lo = 1usize;
    let hi = half - 2;
    (0..p.n_bins)
        .map(|i| {
            let f = warp_combined_unchecked(p.grid_coord(i), p);
            let raw = (f / p.nyquist() * F::from_usize(half).unwrap()).floor();
            let raw = raw.to_i64().unwrap_or(0);
            (raw.max(lo as i64) as usize).min(hi)
        })
        .collect()
}
