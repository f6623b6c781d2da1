//! Optimizer with decoupled weight decay, per-group learning rates,
//! and a smooth internal parametrization of the filter parameters.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{FrontendWeights, ModelParams, ParamGroup};
use crate::num::{lit, Real};

use super::grad::GradientTape;
use super::TrainConfig;

/// Which parameter group an epoch is allowed to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Joint,
    /// Network weights only; filter parameters frozen.
    Network,
    /// Filter parameters only; network weights frozen.
    Filter,
}

impl Phase {
    pub fn allows(self, group: ParamGroup) -> bool {
        match self {
            Phase::Joint => true,
            Phase::Network => group == ParamGroup::Network,
            Phase::Filter => group == ParamGroup::Filter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Joint => "joint",
            Phase::Network => "network",
            Phase::Filter => "filter",
        }
    }
}

/// Cosine-annealed learning rate over `horizon` epochs. Decays from
/// `base` at epoch 0 to near zero at the final scheduled epoch.
pub fn cosine_lr(base: f64, epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return base;
    }
    let t = (epoch.min(horizon)) as f64 / horizon as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Same cosine shape, normalized to 1 at epoch 0; scales the gradient
/// noise.
pub fn cosine_decay(epoch: usize, horizon: usize) -> f64 {
    cosine_lr(1.0, epoch, horizon)
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Plain,
    Breakpoint,
    Width,
}

#[derive(Debug, Clone)]
struct FlatMeta {
    group: ParamGroup,
    decay: bool,
    mult: f64,
    slot: Slot,
}

/// Adaptive-moment optimizer with decoupled weight decay. State lives
/// in the flattened trainable-parameter order; breakpoint and width
/// are handled in transformed coordinates (normalized position and
/// log-width), which is where their moments and steps live.
pub struct AdamW<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
    meta: Vec<FlatMeta>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    lr_mult_breakpoint: f64,
    lr_mult_width: f64,
}

impl<F: Real> AdamW<F> {
    pub fn new(model: &ModelParams<F>, cfg: &TrainConfig) -> Self {
        let mut meta = Vec::new();
        for info in model.tensor_infos() {
            if !info.trainable {
                continue;
            }
            let slot = match info.path.as_str() {
                "frontend.breakpoint" => Slot::Breakpoint,
                "frontend.width" => Slot::Width,
                _ => Slot::Plain,
            };
            // decay only the multiplicative network weights; biases,
            // normalization affines and filter parameters are exempt
            let decay = info.weight_like();
            let mult = match slot {
                Slot::Breakpoint => cfg.lr_mult_breakpoint,
                Slot::Width => cfg.lr_mult_width,
                Slot::Plain => 1.0,
            };
            for _ in 0..info.len {
                meta.push(FlatMeta {
                    group: info.group,
                    decay,
                    mult,
                    slot,
                });
            }
        }
        let n = meta.len();
        AdamW {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
            meta,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
            lr_mult_breakpoint: cfg.lr_mult_breakpoint,
            lr_mult_width: cfg.lr_mult_width,
        }
    }

    /// Zeroes first and second moments of the filter parameters only.
    pub fn reset_filter_moments(&mut self) {
        for (i, meta) in self.meta.iter().enumerate() {
            if meta.group == ParamGroup::Filter {
                self.m[i] = F::zero();
                self.v[i] = F::zero();
            }
        }
    }

    /// One update. Only parameters the phase allows are touched; all
    /// others stay bit-identical, including their moments. Gradient
    /// noise (filter parameters only) is injected here so that it goes
    /// through the same adaptive scaling as the data gradient.
    pub fn step(
        &mut self,
        model: &mut ModelParams<F>,
        tape: &GradientTape<F>,
        phase: Phase,
        lr: f64,
        noise_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if tape.items == 0 {
            return Err(Error::domain("optimizer step on an empty tape".to_string()));
        }
        let mut theta = model.flatten_trainable();
        let mut grad = tape.grads.flatten_trainable();
        if theta.len() != self.meta.len() || grad.len() != self.meta.len() {
            return Err(Error::shape("tape does not match optimizer layout".to_string()));
        }
        let inv_items = lit::<F>(1.0 / tape.items as f64);
        for g in &mut grad {
            *g = *g * inv_items;
        }

        // move the filter pair into transformed coordinates; frozen
        // parameters skip the round-trip so they stay bit-identical
        let fp = model.filterbank_params();
        let span = fp.f_max - fp.f_min;
        for (i, meta) in self.meta.iter().enumerate() {
            if !phase.allows(meta.group) {
                continue;
            }
            match meta.slot {
                Slot::Plain => {}
                Slot::Breakpoint => {
                    grad[i] = grad[i] * span; // d/d(position) = d/db * span
                    theta[i] = (theta[i] - fp.f_min) / span;
                }
                Slot::Width => {
                    grad[i] = grad[i] * theta[i]; // d/d(ln w) = d/dw * w
                    theta[i] = theta[i].ln();
                }
            }
        }

        self.t += 1;
        let b1: F = lit(self.beta1);
        let b2: F = lit(self.beta2);
        let bc1 = F::one() - lit::<F>(self.beta1.powi(self.t as i32));
        let bc2 = F::one() - lit::<F>(self.beta2.powi(self.t as i32));
        let eps: F = lit(self.eps);
        let noise = if noise_std > 0.0 {
            Some(Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?)
        } else {
            None
        };

        for (i, meta) in self.meta.iter().enumerate() {
            if !phase.allows(meta.group) {
                continue;
            }
            let mut g = grad[i];
            if meta.group == ParamGroup::Filter {
                if let Some(n) = &noise {
                    g = g + lit::<F>(n.sample(rng));
                }
            }
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr_i: F = lit(lr * meta.mult);
            theta[i] = theta[i] - lr_i * m_hat / (v_hat.sqrt() + eps);
            if meta.decay {
                theta[i] = theta[i] - lr_i * lit::<F>(self.weight_decay) * theta[i];
            }
        }

        // back out of the transformed coordinates and clamp
        for (i, meta) in self.meta.iter().enumerate() {
            if !phase.allows(meta.group) {
                continue;
            }
            match meta.slot {
                Slot::Plain => {}
                Slot::Breakpoint => theta[i] = fp.f_min + theta[i] * span,
                Slot::Width => theta[i] = theta[i].exp(),
            }
        }
        model.unflatten_trainable(&theta)?;
        if let FrontendWeights::Semi { breakpoint, width } = &mut model.frontend {
            let mut p = model.config.filterbank_params(*breakpoint, *width);
            p.clamp_learnable();
            *breakpoint = p.breakpoint;
            *width = p.width;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Effective learning-rate multiplier for a registry path (used in
    /// logs).
    pub fn multiplier_for(&self, path: &str) -> f64 {
        match path {
            "frontend.breakpoint" => self.lr_mult_breakpoint,
            "frontend.width" => self.lr_mult_width,
            _ => 1.0,
        }
    }
}
