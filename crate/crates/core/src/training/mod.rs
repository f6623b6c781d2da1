//! Desk-scale training: full backpropagation through frontend, encoder
//! and head; focal-distillation loss; alternating network/filter
//! optimization with validation feedback.

mod grad;
mod loss;
mod optim;
mod schedule;

pub use grad::{
    adopt_running_stats, batch_backward, batch_loss, batch_predict, check_gradients,
    make_dropout_mask, prepare_item, BatchOutput, GradientTape, PreparedItem, TapeDiagnostics,
};
pub use loss::{
    adaptive_alpha, class_weights, focal_grad, focal_loss, soft_distill_grad, soft_distill_loss,
};
pub use optim::{cosine_decay, cosine_lr, AdamW, Phase};
pub use schedule::{
    augment_samples, eval_accuracy, phase_schedule, run_schedule, EpochRecord, TrainItem,
    TrainSummary,
};

use crate::error::{Error, Result};

/// How validation feedback constrains filter-parameter moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterFeedback {
    /// Restore the previous (breakpoint, width) when held-out accuracy
    /// drops by more than the tolerance, relative.
    Reject,
    /// Clamp the new values into a ±tolerance band around the previous
    /// ones instead of discarding the move.
    Bound,
}

impl std::str::FromStr for FilterFeedback {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(FilterFeedback::Reject),
            "bound" => Ok(FilterFeedback::Bound),
            other => Err(Error::config(format!(
                "unknown feedback mode {other:?} (expected reject|bound)"
            ))),
        }
    }
}

/// All trainer hyperparameters. CLI flags mirror these fields 1:1.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Distillation mix ceiling for the adaptive blend.
    pub alpha: f64,
    /// Softmax temperature for the distillation term.
    pub temperature: f64,
    /// Focusing exponent of the focal term.
    pub gamma: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier for the breakpoint parameter.
    pub lr_mult_breakpoint: f64,
    /// Learning-rate multiplier for the transition-width parameter.
    pub lr_mult_width: f64,
    /// Total epoch budget; also the cosine-annealing horizon.
    pub epochs: usize,
    /// Leading joint-training epochs.
    pub warmup_epochs: usize,
    /// Network-only epochs per alternation cycle.
    pub cycle_network: usize,
    /// Filter-only epochs per alternation cycle.
    pub cycle_filter: usize,
    /// Trailing joint-refinement epochs.
    pub refine_epochs: usize,
    /// Early-stopping patience in epochs without validation improvement.
    pub patience: usize,
    pub batch_size: usize,
    /// Minimum teacher max-probability for a soft term to count.
    pub teacher_threshold: f64,
    /// EMA rate of the adaptive distillation mix.
    pub adaptation_rate: f64,
    /// Dropout rate on encoder outputs (train mode only).
    pub dropout: f64,
    /// Base std of Gaussian gradient noise in filter phases.
    pub grad_noise_std: f64,
    /// Minimum epoch gap between oscillatory filter perturbations.
    pub perturb_every: usize,
    /// Relative amplitude of the perturbation.
    pub perturb_frac: f64,
    pub feedback: FilterFeedback,
    /// Relative validation-accuracy drop that triggers the feedback.
    pub feedback_tolerance: f64,
    /// Waveform augmentation (gain jitter, time shift, added noise).
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.4,
            temperature: 3.0,
            gamma: 4.0,
            base_lr: 1e-3,
            weight_decay: 0.01,
            lr_mult_breakpoint: 15.0,
            lr_mult_width: 5.0,
            epochs: 150,
            warmup_epochs: 5,
            cycle_network: 5,
            cycle_filter: 1,
            refine_epochs: 20,
            patience: 35,
            batch_size: 64,
            teacher_threshold: 0.05,
            adaptation_rate: 0.1,
            dropout: 0.1,
            grad_noise_std: 1e-4,
            perturb_every: 5,
            perturb_frac: 0.02,
            feedback: FilterFeedback::Reject,
            feedback_tolerance: 0.10,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 1]".to_string()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive".to_string()));
        }
        if self.gamma < 0.0 {
            return Err(Error::config("gamma must be non-negative".to_string()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::config("base learning rate must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1 epoch".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)".to_string()));
        }
        if !(0.0..=1.0).contains(&self.adaptation_rate) {
            return Err(Error::config("adaptation rate must lie in [0, 1]".to_string()));
        }
        Ok(())
    }
}
