//! Short-time Fourier analysis: windowed power spectra on causal frames.
//!
//! Frames are taken without center padding — frame `t` covers samples
//! `[t * hop, t * hop + n_fft)` — so frame `t` never sees audio beyond
//! its own end. A signal shorter than one window yields no frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::num::{lit, Real};

/// Windowed FFT power-spectrum analyzer. Owns its plan and scratch.
pub struct Stft<F: Real> {
    n_fft: usize,
    hop: usize,
    window: Vec<F>,
    fft: Arc<dyn Fft<F>>,
    buf: Vec<Complex<F>>,
    scratch: Vec<Complex<F>>,
}

impl<F: Real> Stft<F> {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || !n_fft.is_power_of_two() {
            return Err(Error::config("n_fft must be a power of two"));
        }
        if hop == 0 || hop > n_fft {
            return Err(Error::config("hop must satisfy 0 < hop <= n_fft"));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let scratch = vec![Complex::new(F::zero(), F::zero()); fft.get_inplace_scratch_len()];
        Ok(Stft {
            n_fft,
            hop,
            window: hann_periodic(n_fft),
            fft,
            buf: vec![Complex::new(F::zero(), F::zero()); n_fft],
            scratch,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// One-sided spectrum length, `n_fft/2 + 1`.
    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of complete frames in a signal of `len` samples:
    /// `floor((len - n_fft)/hop) + 1`, or zero when `len < n_fft`.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }

    /// Power spectrum `|FFT(window * frame)|^2` of one frame.
    pub fn power_spectrum(&mut self, frame: &[F], out: &mut [F]) -> Result<()> {
        if frame.len() != self.n_fft {
            return Err(Error::shape(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.n_fft
            )));
        }
        if out.len() != self.n_freqs() {
            return Err(Error::shape(format!(
                "output has {} bins, expected {}",
                out.len(),
                self.n_freqs()
            )));
        }
        for (dst, (x, w)) in self.buf.iter_mut().zip(frame.iter().zip(&self.window)) {
            *dst = Complex::new(*x * *w, F::zero());
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(self.buf.iter()) {
            *o = c.re * c.re + c.im * c.im;
        }
        Ok(())
    }

    /// All frames of a signal, row-major `frames x n_freqs`.
    pub fn power_spectrogram(&mut self, samples: &[F]) -> Vec<F> {
        let frames = self.frame_count(samples.len());
        let n_freqs = self.n_freqs();
        let mut out = vec![F::zero(); frames * n_freqs];
        for t in 0..frames {
            let start = t * self.hop;
            let frame = &samples[start..start + self.n_fft];
            self.power_spectrum(frame, &mut out[t * n_freqs..(t + 1) * n_freqs])
                .expect("frame length fixed by construction");
        }
        out
    }
}

/// Periodic Hann window `0.5 (1 - cos(2 pi i / N))`.
pub fn hann_periodic<F: Real>(n: usize) -> Vec<F> {
    let half = lit::<F>(0.5);
    let step = lit::<F>(std::f64::consts::TAU) / F::from_usize(n).unwrap();
    (0..n)
        .map(|i| half * (F::one() - (step * F::from_usize(i).unwrap()).cos()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook DFT, O(n^2), as the independent oracle.
    fn naive_power(frame: &[f64], window: &[f64]) -> Vec<f64> {
        let n = frame.len();
        let mut out = Vec::with_capacity(n / 2 + 1);
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let ang = -std::f64::consts::TAU * (k * i) as f64 / n as f64;
                let x = frame[i] * window[i];
                re += x * ang.cos();
                im += x * ang.sin();
            }
            out.push(re * re + im * im);
        }
        out
    }

    #[test]
    fn window_is_periodic_hann() {
        let w = hann_periodic::<f64>(8);
        assert_eq!(w[0], 0.0);
        // periodic form: w[N/2] = 1 exactly, and w[i] = w[N - i]
        assert!((w[4] - 1.0).abs() < 1e-15);
        for i in 1..8 {
            assert!((w[i] - w[8 - i]).abs() < 1e-15);
        }
        // symmetric Hann would have w[7] = 0; periodic does not
        assert!(w[7] > 0.0);
    }

    #[test]
    fn power_matches_naive_dft() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let frame: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut stft = Stft::new(n, 32).unwrap();
        let mut got = vec![0.0; n / 2 + 1];
        stft.power_spectrum(&frame, &mut got).unwrap();
        let want = naive_power(&frame, &hann_periodic(n));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }

    #[test]
    fn pure_tone_concentrates_at_its_bin() {
        // bin-exact tone at k = 40 of a 512-point FFT at 32 kHz -> 2.5 kHz
        let n = 512;
        let sr = 32_000.0;
        let f = 40.0 * sr / n as f64;
        let frame: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * f * i as f64 / sr).sin())
            .collect();
        let mut stft = Stft::new(n, 320).unwrap();
        let mut p = vec![0.0; n / 2 + 1];
        stft.power_spectrum(&frame, &mut p).unwrap();
        let peak = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 40);
        // Hann leakage is confined to adjacent bins
        let total: f64 = p.iter().sum();
        let local: f64 = p[39..=41].iter().sum();
        assert!(local / total > 0.999);
    }

    #[test]
    fn frame_count_examples() {
        let stft = Stft::<f32>::new(512, 320).unwrap();
        assert_eq!(stft.frame_count(0), 0);
        assert_eq!(stft.frame_count(511), 0);
        assert_eq!(stft.frame_count(512), 1);
        assert_eq!(stft.frame_count(831), 1);
        assert_eq!(stft.frame_count(832), 2);
        // 3 s at 32 kHz
        assert_eq!(stft.frame_count(96_000), 299);
        // one 200 ms chunk
        assert_eq!(stft.frame_count(6400), 19);
    }

    #[test]
    fn shape_errors() {
        let mut stft = Stft::<f32>::new(512, 320).unwrap();
        let mut out = vec![0.0f32; 257];
        assert!(stft.power_spectrum(&vec![0.0; 511], &mut out).is_err());
        let mut short = vec![0.0f32; 256];
        assert!(stft.power_spectrum(&vec![0.0; 512], &mut short).is_err());
        assert!(Stft::<f32>::new(500, 320).is_err());
        assert!(Stft::<f32>::new(512, 0).is_err());
        assert!(Stft::<f32>::new(512, 513).is_err());
    }
}
