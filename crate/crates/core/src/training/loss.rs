//! Loss terms: class-weighted focal loss on hard labels, temperature-
//! scaled distillation on teacher logits, and the adaptive blend
//! between them.

use crate::error::{Error, Result};
use crate::num::{lit, Real};

use super::TrainConfig;

/// Probabilities below this are clamped before the logarithm; callers
/// are told via the returned flag.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class-weighted focal loss `-weight * (1 - p)^gamma * ln p` for the
/// labelled class. Returns the loss and whether the probability had to
/// be clamped away from zero.
pub fn focal_loss<F: Real>(probs: &[F], label: usize, gamma: F, class_weight: F) -> Result<(F, bool)> {
    if label >= probs.len() {
        return Err(Error::shape(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs[label];
    let clamped = p < lit(PROB_FLOOR);
    let p = p.max(lit(PROB_FLOOR));
    let focus = (F::one() - p).max(F::zero()).powf(gamma);
    Ok((-class_weight * focus * p.ln(), clamped))
}

/// Adds the focal gradient with respect to the logits that produced
/// `probs` (softmax outputs) into `dlogits`.
pub fn focal_grad<F: Real>(
    probs: &[F],
    label: usize,
    gamma: F,
    class_weight: F,
    scale: F,
    dlogits: &mut [F],
) {
    let p = probs[label].max(lit(PROB_FLOOR));
    let q = (F::one() - p).max(F::zero());
    // d/dp of -(1-p)^g ln p, with the flat region at p = 1 mapped to 0
    let term1 = if gamma > F::zero() && q > F::zero() {
        gamma * q.powf(gamma - F::one()) * p.ln()
    } else {
        F::zero()
    };
    let term2 = q.powf(gamma) / p;
    let dl_dp = class_weight * (term1 - term2);
    // softmax backward restricted to a single-output functional
    let common = dl_dp * p * scale;
    for (j, d) in dlogits.iter_mut().enumerate() {
        let indicator = if j == label { F::one() } else { F::zero() };
        *d = *d + common * (indicator - probs[j]);
    }
}

/// Temperature-scaled distillation loss
/// `T^2 * KL(softmax(teacher/T) || softmax(student/T))`.
pub fn soft_distill_loss<F: Real>(student: &[F], teacher: &[F], t: F) -> Result<F> {
    if student.len() != teacher.len() {
        return Err(Error::shape(format!(
            "student has {} logits, teacher {}",
            student.len(),
            teacher.len()
        )));
    }
    let lp = log_softmax_scaled(teacher, t);
    let lq = log_softmax_scaled(student, t);
    let mut kl = F::zero();
    for (lpi, lqi) in lp.iter().zip(&lq) {
        let p = lpi.exp();
        if p > F::zero() {
            kl = kl + p * (*lpi - *lqi);
        }
    }
    Ok((t * t * kl).max(F::zero()))
}

/// Adds the distillation gradient with respect to the student logits
/// into `dlogits`: `T * (softmax(student/T) - softmax(teacher/T))`.
pub fn soft_distill_grad<F: Real>(student: &[F], teacher: &[F], t: F, scale: F, dlogits: &mut [F]) {
    let lp = log_softmax_scaled(teacher, t);
    let lq = log_softmax_scaled(student, t);
    for ((d, lpi), lqi) in dlogits.iter_mut().zip(&lp).zip(&lq) {
        *d = *d + scale * t * (lqi.exp() - lpi.exp());
    }
}

fn log_softmax_scaled<F: Real>(logits: &[F], t: F) -> Vec<F> {
    let mut z: Vec<F> = logits.iter().map(|&v| v / t).collect();
    let max = z.iter().cloned().fold(F::neg_infinity(), F::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    for v in &mut z {
        *v = *v - lse;
    }
    z
}

/// One step of the running distillation mix:
/// `running <- (1-rate)*running + rate*(alpha*confidence)`, clamped to
/// `[0, alpha]`. The fixed point under full teacher confidence is
/// `alpha` itself.
pub fn adaptive_alpha<F: Real>(teacher_max_prob: F, running_alpha: F, cfg: &TrainConfig) -> F {
    let rate: F = lit(cfg.adaptation_rate);
    let base: F = lit(cfg.alpha);
    let next = (F::one() - rate) * running_alpha + rate * base * teacher_max_prob;
    next.max(F::zero()).min(base)
}

/// Inverse-frequency class weights `N / (K * n_c)`, normalized to mean
/// one. Errors when any class has no examples.
pub fn class_weights<F: Real>(counts: &[usize]) -> Result<Vec<F>> {
    if counts.is_empty() {
        return Err(Error::config("no classes to weight".to_string()));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len();
    let mut weights = Vec::with_capacity(k);
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::data(format!("class {c} has no examples")));
        }
        weights.push(lit::<F>(total as f64) / (lit::<F>(k as f64) * lit::<F>(n as f64)));
    }
    let mean = weights.iter().cloned().sum::<F>() / lit::<F>(k as f64);
    for w in &mut weights {
        *w = *w / mean;
    }
    Ok(weights)
}
