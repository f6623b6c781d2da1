//! Spectral frontend: STFT power spectra pooled through a triangular
//! filterbank and log-compressed.
//!
//! The default bank's center frequencies come from a log/linear warp
//! blended by a learnable sigmoid (breakpoint + transition width), so
//! training can move spectral resolution between low and high bands.
//! Fixed mel, fixed linear, and a fully learnable dense matrix are
//! available as ablation alternatives.

mod filterbank;
mod stft;
mod warp;

pub use filterbank::{
    build_filterbank, build_filterbank_grad, filterbank_from_centers, hz_to_mel,
    linear_filterbank, mel_filterbank, mel_to_hz, warped_centers, FilterbankGrad,
    FilterbankMatrix,
};
pub use stft::{hann_periodic, Stft};
pub use warp::{
    compute_bin_indices, sigmoid_weight, warp_combined, warp_combined_grad, warp_linear,
    warp_log, FilterbankParams, BREAKPOINT_MARGIN_HZ, WIDTH_CEIL, WIDTH_FLOOR,
};

use crate::error::{Error, Result};
use crate::num::{lit, Real};

/// Additive constant inside the log compression.
pub const LOG_EPSILON: f64 = 1e-6;

/// Which filterbank the frontend uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontendKind {
    /// Warped bank with learnable breakpoint and transition width.
    SemiLearnable,
    /// Fixed mel-spaced bank.
    FixedMel,
    /// Fixed linearly spaced bank.
    FixedLinear,
    /// Dense unconstrained matrix, initialized to the linear bank.
    FullyLearnable,
}

impl FrontendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrontendKind::SemiLearnable => "semi",
            FrontendKind::FixedMel => "mel",
            FrontendKind::FixedLinear => "linear",
            FrontendKind::FullyLearnable => "full",
        }
    }
}

impl std::str::FromStr for FrontendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi" => Ok(FrontendKind::SemiLearnable),
            "mel" => Ok(FrontendKind::FixedMel),
            "linear" => Ok(FrontendKind::FixedLinear),
            "full" => Ok(FrontendKind::FullyLearnable),
            other => Err(Error::config(format!(
                "unknown frontend kind {other:?}; expected semi|mel|linear|full"
            ))),
        }
    }
}

/// `ln(max(e, 0) + epsilon)`. The clamp only matters for the fully
/// learnable bank, whose unconstrained weights can produce negative
/// energies.
pub fn log_compress<F: Real>(e: F) -> F {
    (e.max(F::zero()) + lit::<F>(LOG_EPSILON)).ln()
}

/// Materializes the bank for a frontend kind. The fully learnable kind
/// starts from the linear bank; its matrix then lives in the model
/// parameters and is rebuilt via [`FilterbankMatrix`] directly.
pub fn build_bank_for_kind<F: Real>(
    kind: FrontendKind,
    p: &FilterbankParams<F>,
) -> Result<FilterbankMatrix<F>> {
    match kind {
        FrontendKind::SemiLearnable => build_filterbank(p),
        FrontendKind::FixedMel => mel_filterbank(p),
        FrontendKind::FixedLinear | FrontendKind::FullyLearnable => linear_filterbank(p),
    }
}

/// Wraps a dense learnable matrix as a [`FilterbankMatrix`] with full
/// support on every row.
pub fn dense_bank<F: Real>(
    weights: &[F],
    n_bins: usize,
    n_freqs: usize,
    centers: &[F],
) -> Result<FilterbankMatrix<F>> {
    if weights.len() != n_bins * n_freqs {
        return Err(Error::shape(format!(
            "dense bank has {} weights, expected {}",
            weights.len(),
            n_bins * n_freqs
        )));
    }
    Ok(FilterbankMatrix {
        weights: weights.to_vec(),
        center_freqs: centers.to_vec(),
        n_bins,
        n_freqs,
        support: vec![(0, n_freqs); n_bins],
    })
}

/// STFT analyzer plus a materialized bank: samples in, log energies out.
pub struct Frontend<F: Real> {
    stft: Stft<F>,
    bank: FilterbankMatrix<F>,
    power: Vec<F>,
}

impl<F: Real> Frontend<F> {
    pub fn new(bank: FilterbankMatrix<F>, n_fft: usize, hop: usize) -> Result<Self> {
        let stft = Stft::new(n_fft, hop)?;
        if bank.n_freqs != stft.n_freqs() {
            return Err(Error::shape(format!(
                "bank expects {} spectrum bins, FFT produces {}",
                bank.n_freqs,
                stft.n_freqs()
            )));
        }
        let power = vec![F::zero(); stft.n_freqs()];
        Ok(Frontend { stft, bank, power })
    }

    pub fn from_params(p: &FilterbankParams<F>) -> Result<Self> {
        Self::new(build_filterbank(p)?, p.n_fft, p.hop)
    }

    pub fn bank(&self) -> &FilterbankMatrix<F> {
        &self.bank
    }

    /// Swaps in a rebuilt bank (after a filter-parameter update).
    pub fn set_bank(&mut self, bank: FilterbankMatrix<F>) -> Result<()> {
        if bank.n_freqs != self.stft.n_freqs() {
            return Err(Error::shape("bank/FFT bin mismatch".to_string()));
        }
        self.bank = bank;
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.bank.n_bins
    }

    pub fn stft(&self) -> &Stft<F> {
        &self.stft
    }

    /// Log filterbank energies for one frame of `n_fft` samples.
    pub fn forward_frame(&mut self, frame: &[F], out: &mut [F]) -> Result<()> {
        if out.len() != self.bank.n_bins {
            return Err(Error::shape(format!(
                "output has {} bins, expected {}",
                out.len(),
                self.bank.n_bins
            )));
        }
        self.stft.power_spectrum(frame, &mut self.power)?;
        self.bank.apply(&self.power, out);
        for v in out.iter_mut() {
            *v = log_compress(*v);
        }
        Ok(())
    }

    /// Feature matrix for a whole signal, row-major `frames x n_bins`.
    pub fn forward_signal(&mut self, samples: &[F]) -> Vec<F> {
        let frames = self.stft.frame_count(samples.len());
        let n = self.bank.n_bins;
        let hop = self.stft.hop();
        let n_fft = self.stft.n_fft();
        let mut out = vec![F::zero(); frames * n];
        for t in 0..frames {
            let frame = &samples[t * hop..t * hop + n_fft];
            self.forward_frame(frame, &mut out[t * n..(t + 1) * n])
                .expect("shapes fixed by construction");
        }
        out
    }
}

/// Human-readable table of the current bank: one row per filter with its
/// grid coordinate, center frequency, discrete FFT bin, and row sum.
pub fn dump_filterbank<F: Real>(p: &FilterbankParams<F>) -> Result<String> {
    let fb = build_filterbank(p)?;
    let bins = compute_bin_indices(p);
    let sums = fb.row_sums();
    let mut out = String::with_capacity(4096);
    out.push_str(&format!(
        "# filterbank n={} n_fft={} sr={} f_min={} f_max={} breakpoint={} width={}\n",
        p.n_bins, p.n_fft, p.sample_rate, p.f_min, p.f_max, p.breakpoint, p.width
    ));
    out.push_str("index\tx\tcenter_hz\tfft_bin\trow_sum\n");
    for i in 0..p.n_bins {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.3}\t{}\t{:.6}\n",
            i,
            p.grid_coord(i).to_f64().unwrap(),
            fb.center_freqs[i].to_f64().unwrap(),
            bins[i],
            sums[i].to_f64().unwrap(),
        ));
    }
    Ok(out)
}
