//! Triangular filterbank construction on the one-sided FFT grid.
//!
//! Each filter is a triangle in continuous frequency with its apex at a
//! center `c_i` and feet at the neighbouring centers; the first and last
//! filters are half-triangles pinned to the band edges. Weights are the
//! *average* of the triangle over each FFT bin's frequency cell (width
//! `sr / n_fft`) rather than point samples. This keeps every filter's
//! energy positive no matter how narrow it gets, and makes the weights
//! piecewise-smooth in the centers so the learnable warp receives
//! useful gradients.

use crate::error::{Error, Result};
use crate::num::{lit, Real};

use super::warp::{warp_combined_grad, warp_combined_unchecked, FilterbankParams};

/// A filterbank evaluated on the FFT grid. Row-major `n_bins x n_freqs`.
#[derive(Debug, Clone)]
pub struct FilterbankMatrix<F> {
    pub weights: Vec<F>,
    /// Continuous center frequency of each filter, Hz.
    pub center_freqs: Vec<F>,
    pub n_bins: usize,
    pub n_freqs: usize,
    /// Per-row half-open `[start, end)` range of FFT bins with support.
    pub support: Vec<(usize, usize)>,
}

impl<F: Real> FilterbankMatrix<F> {
    pub fn row(&self, i: usize) -> &[F] {
        &self.weights[i * self.n_freqs..(i + 1) * self.n_freqs]
    }

    /// Applies the bank to a one-sided power spectrum.
    pub fn apply(&self, power: &[F], out: &mut [F]) {
        debug_assert_eq!(power.len(), self.n_freqs);
        debug_assert_eq!(out.len(), self.n_bins);
        for i in 0..self.n_bins {
            let (k0, k1) = self.support[i];
            let row = &self.weights[i * self.n_freqs + k0..i * self.n_freqs + k1];
            let mut acc = F::zero();
            for (w, p) in row.iter().zip(&power[k0..k1]) {
                acc = acc + *w * *p;
            }
            out[i] = acc;
        }
    }

    /// Sum of each row's weights; positive for every valid bank.
    pub fn row_sums(&self) -> Vec<F> {
        (0..self.n_bins)
            .map(|i| self.row(i).iter().copied().sum())
            .collect()
    }
}

/// Sensitivity of the bank to its center frequencies, and of the centers
/// to the learnable pair `(b, w)`. Produced alongside the matrix during
/// training; row `i`'s weights depend only on centers `i-1, i, i+1`.
#[derive(Debug, Clone)]
pub struct FilterbankGrad<F> {
    /// Per row: `(d weight / d c_{i-1}, d/d c_i, d/d c_{i+1})` for each
    /// supported FFT bin, aligned with `support[i]`.
    pub d_center: Vec<Vec<(F, F, F)>>,
    /// `d c_i / d b` for each center.
    pub dc_db: Vec<F>,
    /// `d c_i / d w` for each center.
    pub dc_dw: Vec<F>,
}

impl<F: Real> FilterbankGrad<F> {
    /// Folds per-weight adjoints into `(dL/db, dL/dw)`. The closure
    /// returns `dL / d weights[i][k]` for a supported bin.
    pub fn fold<G: FnMut(usize, usize) -> F>(
        &self,
        fb: &FilterbankMatrix<F>,
        mut dl_dweight: G,
    ) -> (F, F) {
        let n = fb.n_bins;
        let mut dl_dc = vec![F::zero(); n];
        for i in 0..n {
            let (k0, _) = fb.support[i];
            for (j, &(dp, ds, dn)) in self.d_center[i].iter().enumerate() {
                let g = dl_dweight(i, k0 + j);
                if i > 0 {
                    dl_dc[i - 1] = dl_dc[i - 1] + g * dp;
                }
                dl_dc[i] = dl_dc[i] + g * ds;
                if i + 1 < n {
                    dl_dc[i + 1] = dl_dc[i + 1] + g * dn;
                }
            }
        }
        let mut db = F::zero();
        let mut dw = F::zero();
        for i in 0..n {
            db = db + dl_dc[i] * self.dc_db[i];
            dw = dw + dl_dc[i] * self.dc_dw[i];
        }
        (db, dw)
    }
}

/// Average of the rising ramp `(f - lo) / (apex - lo)` over `[u, v]`
/// intersected with `[lo, apex]`, times `(v - u)` (i.e. the integral),
/// with partial derivatives with respect to `lo` and `apex`.
fn rising_integral<F: Real>(lo: F, apex: F, u: F, v: F) -> (F, F, F) {
    let a = u.max(lo);
    let b = v.min(apex);
    if b <= a {
        return (F::zero(), F::zero(), F::zero());
    }
    let d = apex - lo;
    let two = lit::<F>(2.0);
    let int = ((b - lo) * (b - lo) - (a - lo) * (a - lo)) / (two * d);
    // Boundary terms vanish: the integrand is zero wherever `lo` moves a
    // limit, and the upper limit only tracks `apex`.
    let d_lo = ((b - apex) * (b - apex) - (a - apex) * (a - apex)) / (two * d * d);
    let boundary = if apex < v { F::one() } else { F::zero() };
    let d_apex = boundary - ((b - lo) * (b - lo) - (a - lo) * (a - lo)) / (two * d * d);
    (int, d_lo, d_apex)
}

/// Mirror of [`rising_integral`] for the falling ramp
/// `(hi - f) / (hi - apex)` over `[u, v]` intersected with `[apex, hi]`.
/// Partials are with respect to `apex` and `hi`.
fn falling_integral<F: Real>(apex: F, hi: F, u: F, v: F) -> (F, F, F) {
    let a = u.max(apex);
    let b = v.min(hi);
    if b <= a {
        return (F::zero(), F::zero(), F::zero());
    }
    let d = hi - apex;
    let two = lit::<F>(2.0);
    let int = ((hi - a) * (hi - a) - (hi - b) * (hi - b)) / (two * d);
    let boundary = if apex > u { F::one() } else { F::zero() };
    let d_apex = ((hi - a) * (hi - a) - (hi - b) * (hi - b)) / (two * d * d) - boundary;
    let d_hi = ((b - apex) * (b - apex) - (a - apex) * (a - apex)) / (two * d * d);
    (int, d_apex, d_hi)
}

/// Continuous centers of the learnable bank: the combined warp sampled
/// on the uniform grid `x_i = i/(n-1)`.
pub fn warped_centers<F: Real>(p: &FilterbankParams<F>) -> Vec<F> {
    (0..p.n_bins)
        .map(|i| warp_combined_unchecked(p.grid_coord(i), p))
        .collect()
}

/// Builds a triangular bank from explicit strictly-increasing centers.
/// The first and last centers act as the band edges, so the edge filters
/// are half-triangles.
pub fn filterbank_from_centers<F: Real>(
    centers: &[F],
    n_fft: usize,
    sample_rate: u32,
) -> Result<FilterbankMatrix<F>> {
    let (fb, _) = build_from_centers(centers, n_fft, sample_rate, false)?;
    Ok(fb)
}

/// Builds the semi-learnable bank from the current `(b, w)`.
pub fn build_filterbank<F: Real>(p: &FilterbankParams<F>) -> Result<FilterbankMatrix<F>> {
    p.validate()?;
    filterbank_from_centers(&warped_centers(p), p.n_fft, p.sample_rate)
}

/// Builds the bank plus everything needed to backpropagate through it
/// into `(b, w)`.
pub fn build_filterbank_grad<F: Real>(
    p: &FilterbankParams<F>,
) -> Result<(FilterbankMatrix<F>, FilterbankGrad<F>)> {
    p.validate()?;
    let n = p.n_bins;
    let mut centers = Vec::with_capacity(n);
    let mut dc_db = Vec::with_capacity(n);
    let mut dc_dw = Vec::with_capacity(n);
    for i in 0..n {
        let (c, db, dw) = warp_combined_grad(p.grid_coord(i), p);
        centers.push(c);
        dc_db.push(db);
        dc_dw.push(dw);
    }
    // The band-edge centers are pinned to f_min / f_max, so they carry no
    // gradient regardless of the warp's derivative there.
    dc_db[0] = F::zero();
    dc_dw[0] = F::zero();
    dc_db[n - 1] = F::zero();
    dc_dw[n - 1] = F::zero();
    let (fb, d_center) = build_from_centers(&centers, p.n_fft, p.sample_rate, true)?;
    let grad = FilterbankGrad {
        d_center: d_center.expect("gradients requested"),
        dc_db,
        dc_dw,
    };
    Ok((fb, grad))
}

fn build_from_centers<F: Real>(
    centers: &[F],
    n_fft: usize,
    sample_rate: u32,
    with_grad: bool,
) -> Result<(FilterbankMatrix<F>, Option<Vec<Vec<(F, F, F)>>>)> {
    let n = centers.len();
    if n < 2 {
        return Err(Error::config("need at least 2 filter centers"));
    }
    for pair in centers.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::config(
                "degenerate filterbank: centers must be strictly increasing",
            ));
        }
    }
    let n_freqs = n_fft / 2 + 1;
    let cell = lit::<F>(sample_rate as f64) / F::from_usize(n_fft).unwrap();
    let half_cell = cell / lit::<F>(2.0);
    let mut weights = vec![F::zero(); n * n_freqs];
    let mut support = Vec::with_capacity(n);
    let mut grads: Option<Vec<Vec<(F, F, F)>>> = with_grad.then(Vec::new);

    for i in 0..n {
        let c_prev = if i == 0 { centers[0] } else { centers[i - 1] };
        let c_self = centers[i];
        let c_next = if i + 1 == n { centers[n - 1] } else { centers[i + 1] };

        // FFT bins whose cell [k*cell - cell/2, k*cell + cell/2) meets
        // the open support (c_prev, c_next).
        let k0 = ((c_prev - half_cell) / cell)
            .ceil()
            .to_i64()
            .unwrap_or(0)
            .max(0) as usize;
        let k1 = (((c_next + half_cell) / cell).floor().to_i64().unwrap_or(0) + 1)
            .max(k0 as i64) as usize;
        let k1 = k1.min(n_freqs);
        let k0 = k0.min(k1);
        support.push((k0, k1));

        let mut row_grad = with_grad.then(|| Vec::with_capacity(k1 - k0));
        for k in k0..k1 {
            let center = cell * F::from_usize(k).unwrap();
            let u = center - half_cell;
            let v = center + half_cell;
            let mut int = F::zero();
            let (mut dp, mut ds, mut dn) = (F::zero(), F::zero(), F::zero());
            if i > 0 {
                let (r, d_lo, d_apex) = rising_integral(c_prev, c_self, u, v);
                int = int + r;
                dp = dp + d_lo;
                ds = ds + d_apex;
            }
            if i + 1 < n {
                let (f, d_apex, d_hi) = falling_integral(c_self, c_next, u, v);
                int = int + f;
                ds = ds + d_apex;
                dn = dn + d_hi;
            }
            weights[i * n_freqs + k] = int / cell;
            if let Some(rg) = row_grad.as_mut() {
                rg.push((dp / cell, ds / cell, dn / cell));
            }
        }
        if let (Some(gs), Some(rg)) = (grads.as_mut(), row_grad) {
            gs.push(rg);
        }
    }

    let fb = FilterbankMatrix {
        weights,
        center_freqs: centers.to_vec(),
        n_bins: n,
        n_freqs,
        support,
    };
    Ok((fb, grads))
}

/// Mel scale (HTK convention), used by the fixed reference bank.
pub fn hz_to_mel<F: Real>(f: F) -> F {
    lit::<F>(2595.0) * (F::one() + f / lit::<F>(700.0)).log10()
}

pub fn mel_to_hz<F: Real>(m: F) -> F {
    lit::<F>(700.0) * (lit::<F>(10.0).powf(m / lit::<F>(2595.0)) - F::one())
}

/// Fixed mel-spaced bank with the same geometry as the learnable one:
/// `n` centers from `f_min` to `f_max` inclusive, equally spaced in mel.
pub fn mel_filterbank<F: Real>(p: &FilterbankParams<F>) -> Result<FilterbankMatrix<F>> {
    p.validate()?;
    let m_lo = hz_to_mel(p.f_min);
    let m_hi = hz_to_mel(p.f_max);
    let centers: Vec<F> = (0..p.n_bins)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * p.grid_coord(i)))
        .collect();
    filterbank_from_centers(&centers, p.n_fft, p.sample_rate)
}

/// Fixed linearly spaced bank over the same band.
pub fn linear_filterbank<F: Real>(p: &FilterbankParams<F>) -> Result<FilterbankMatrix<F>> {
    p.validate()?;
    let centers: Vec<F> = (0..p.n_bins)
        .map(|i| p.f_min + (p.f_max - p.f_min) * p.grid_coord(i))
        .collect();
    filterbank_from_centers(&centers, p.n_fft, p.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> FilterbankParams<f64> {
        FilterbankParams::default_config()
    }

    /// Numeric quadrature oracle: average the exact triangle over the
    /// cell with a fine midpoint rule. A non-finite foot marks a missing
    /// side (edge half-triangles contribute nothing there).
    fn quadrature_weight(c_prev: f64, c_self: f64, c_next: f64, u: f64, v: f64) -> f64 {
        let steps = 20_000;
        let h = (v - u) / steps as f64;
        let mut acc = 0.0;
        for j in 0..steps {
            let f = u + (j as f64 + 0.5) * h;
            let tri = if f < c_self {
                if c_prev.is_finite() && f > c_prev {
                    (f - c_prev) / (c_self - c_prev)
                } else {
                    0.0
                }
            } else if f > c_self {
                if c_next.is_finite() && f < c_next {
                    (c_next - f) / (c_next - c_self)
                } else {
                    0.0
                }
            } else {
                1.0
            };
            acc += tri * h;
        }
        acc / (v - u)
    }

    #[test]
    fn ramp_integrals_match_quadrature() {
        // Cases cover: cell fully inside, straddling each foot and the
        // apex, and fully outside.
        let cases = [
            (100.0, 200.0, 120.0, 140.0),
            (100.0, 200.0, 90.0, 110.0),
            (100.0, 200.0, 190.0, 210.0),
            (100.0, 200.0, 210.0, 230.0),
            (100.0, 200.0, 50.0, 250.0),
        ];
        for (lo, apex, u, v) in cases {
            let (int, _, _) = rising_integral(lo, apex, u, v);
            let want = quadrature_weight(lo, apex, f64::INFINITY, u, v) * (v - u);
            assert!((int - want).abs() < 1e-6, "rising {lo} {apex} {u} {v}");
            let (int, _, _) = falling_integral(lo, apex, u, v);
            let want = quadrature_weight(f64::NEG_INFINITY, lo, apex, u, v) * (v - u);
            assert!((int - want).abs() < 1e-6, "falling {lo} {apex} {u} {v}");
        }
    }

    #[test]
    fn ramp_gradients_match_finite_differences() {
        let cases: [(f64, f64, f64, f64); 3] = [
            (100.0, 200.0, 120.0, 140.0),
            (100.0, 200.0, 90.0, 110.0),
            (100.0, 200.0, 150.0, 250.0),
        ];
        let h = 1e-5;
        for (lo, apex, u, v) in cases {
            let (_, d_lo, d_apex) = rising_integral(lo, apex, u, v);
            let fd_lo =
                (rising_integral(lo + h, apex, u, v).0 - rising_integral(lo - h, apex, u, v).0)
                    / (2.0 * h);
            let fd_apex =
                (rising_integral(lo, apex + h, u, v).0 - rising_integral(lo, apex - h, u, v).0)
                    / (2.0 * h);
            assert!((d_lo - fd_lo).abs() < 1e-6, "rising d_lo {lo} {apex} {u} {v}");
            assert!((d_apex - fd_apex).abs() < 1e-6, "rising d_apex");

            let (_, d_apex, d_hi) = falling_integral(lo, apex, u, v);
            let fd_a =
                (falling_integral(lo + h, apex, u, v).0 - falling_integral(lo - h, apex, u, v).0)
                    / (2.0 * h);
            let fd_h =
                (falling_integral(lo, apex + h, u, v).0 - falling_integral(lo, apex - h, u, v).0)
                    / (2.0 * h);
            assert!((d_apex - fd_a).abs() < 1e-6, "falling d_apex");
            assert!((d_hi - fd_h).abs() < 1e-6, "falling d_hi");
        }
    }

    #[test]
    fn default_bank_geometry() {
        let p = params();
        let fb = build_filterbank(&p).unwrap();
        assert_eq!(fb.n_bins, 64);
        assert_eq!(fb.n_freqs, 257);
        assert_eq!(fb.weights.len(), 64 * 257);
        // every row keeps positive energy even where triangles are far
        // narrower than one FFT cell
        for (i, s) in fb.row_sums().iter().enumerate() {
            assert!(*s > 0.0, "row {i} sum {s}");
        }
        // weights live in [0, 1]: cell averages of a unit-peak triangle
        assert!(fb.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        // centers are the warp values, pinned to the band edges
        assert_eq!(fb.center_freqs[0], 150.0);
        assert_eq!(fb.center_freqs[63], 16000.0);
    }

    #[test]
    fn weights_match_quadrature_oracle() {
        let p = params();
        let fb = build_filterbank(&p).unwrap();
        let c = &fb.center_freqs;
        let cell = 32_000.0 / 512.0;
        for i in [0usize, 1, 17, 40, 62, 63] {
            let (k0, k1) = fb.support[i];
            let c_prev = if i == 0 { f64::NEG_INFINITY } else { c[i - 1] };
            let c_next = if i == 63 { f64::INFINITY } else { c[i + 1] };
            for k in k0..k1 {
                let u = k as f64 * cell - cell / 2.0;
                let v = k as f64 * cell + cell / 2.0;
                let want = quadrature_weight(c_prev, c[i], c_next, u, v);
                let got = fb.row(i)[k];
                assert!((got - want).abs() < 1e-5, "row {i} bin {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn support_covers_all_nonzero_weights() {
        let p = params();
        let fb = build_filterbank(&p).unwrap();
        for i in 0..fb.n_bins {
            let (k0, k1) = fb.support[i];
            for k in 0..fb.n_freqs {
                if k < k0 || k >= k1 {
                    assert_eq!(fb.row(i)[k], 0.0, "row {i} bin {k} outside support");
                }
            }
        }
    }

    #[test]
    fn bank_gradient_matches_finite_differences() {
        // Perturb (b, w), rebuild, compare the analytic fold against a
        // finite-difference of a fixed linear functional of the weights.
        let mut p = params();
        p.breakpoint = 6000.0;
        p.width = 25.0;
        let (fb, grad) = build_filterbank_grad(&p).unwrap();
        // functional: L = sum_ik coeff(i,k) * W[i][k] with pseudo-random
        // but deterministic coefficients
        let coeff = |i: usize, k: usize| ((i * 257 + k) as f64 * 0.7391).sin();
        let (db, dw) = grad.fold(&fb, |i, k| coeff(i, k));

        let eval = |p: &FilterbankParams<f64>| {
            let fb = build_filterbank(p).unwrap();
            let mut acc = 0.0;
            for i in 0..fb.n_bins {
                let (k0, k1) = fb.support[i];
                for k in k0..k1 {
                    acc += coeff(i, k) * fb.row(i)[k];
                }
            }
            acc
        };
        // The weights are piecewise-linear in the centers with kinks
        // where a center crosses an FFT cell edge, so the difference
        // step must be small enough to stay inside one smooth piece.
        let h_b = 1e-6 * p.breakpoint;
        let mut pp = p.clone();
        pp.breakpoint += h_b;
        let mut pm = p.clone();
        pm.breakpoint -= h_b;
        let fd_b = (eval(&pp) - eval(&pm)) / (2.0 * h_b);
        assert!(
            (db - fd_b).abs() <= 1e-4 * fd_b.abs().max(1e-8),
            "db {db} vs {fd_b}"
        );

        let h_w = 1e-6 * p.width;
        let mut pw = p.clone();
        pw.width += h_w;
        let mut pv = p.clone();
        pv.width -= h_w;
        let fd_w = (eval(&pw) - eval(&pv)) / (2.0 * h_w);
        assert!(
            (dw - fd_w).abs() <= 1e-4 * fd_w.abs().max(1e-8),
            "dw {dw} vs {fd_w}"
        );
    }

    #[test]
    fn mel_bank_bins_are_wider_up_high() {
        let p = params();
        let mel = mel_filterbank(&p).unwrap();
        let lin = linear_filterbank(&p).unwrap();
        // around 9 kHz a mel bank's spacing well exceeds a linear bank's
        let find = |c: &[f64]| c.iter().position(|&f| f > 9000.0).unwrap();
        let im = find(&mel.center_freqs);
        let il = find(&lin.center_freqs);
        let mel_gap = mel.center_freqs[im + 1] - mel.center_freqs[im];
        let lin_gap = lin.center_freqs[il + 1] - lin.center_freqs[il];
        assert!(mel_gap > 1.5 * lin_gap, "mel {mel_gap} vs linear {lin_gap}");
        assert!(mel.row_sums().iter().all(|&s| s > 0.0));
        assert!(lin.row_sums().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn rejects_non_increasing_centers() {
        let err = filterbank_from_centers(&[100.0, 100.0, 200.0], 512, 32_000);
        assert!(err.is_err());
    }
}
