//! Scalar abstraction used throughout the numeric kernels.
//!
//! The runtime and trainer operate on `f32`; the gradient-verification
//! harness instantiates the same code at `f64` so central finite
//! differences are not swamped by rounding noise.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the whole pipeline is generic over.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + rustfft::FftNum
    + Sum
    + Display
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for lifting an `f64` literal into the working precision.
#[inline]
pub fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("literal not representable")
}

/// Numerically stable logistic function. Never returns NaN for finite
/// input; saturates cleanly to 0 or 1 for large |z|.
#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place<F: Real>(x: &mut [F]) {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in x.iter_mut() {
        *v = *v / sum;
    }
}

/// Dense matrix-vector product: `out = m * x` where `m` is row-major
/// `rows x cols`.
pub fn matvec<F: Real>(m: &[F], x: &[F], rows: usize, cols: usize, out: &mut [F]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = F::zero();
        for (a, b) in row.iter().zip(x.iter()) {
            acc = acc + *a * *b;
        }
        *o = acc;
    }
}

/// Accumulates `m^T * g` into `out` (length `cols`). Used by backward
/// passes to push gradients through a dense layer.
pub fn matvec_t_accum<F: Real>(m: &[F], g: &[F], rows: usize, cols: usize, out: &mut [F]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let gr = g[r];
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o = *o + *a * gr;
        }
    }
}

/// Accumulates the outer product `g * x^T` into `dm` (row-major
/// `g.len() x x.len()`): the weight gradient of a dense layer.
pub fn outer_accum<F: Real>(dm: &mut [F], g: &[F], x: &[F]) {
    let cols = x.len();
    debug_assert_eq!(dm.len(), g.len() * cols);
    for (r, &gr) in g.iter().enumerate() {
        let row = &mut dm[r * cols..(r + 1) * cols];
        for (d, b) in row.iter_mut().zip(x.iter()) {
            *d = *d + gr * *b;
        }
    }
}
