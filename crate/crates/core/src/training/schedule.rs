//! The trainer loop: alternating phase schedule, adaptive loss blend,
//! augmentation, early stopping, and validation feedback on the filter
//! parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::Stft;
use crate::model::{FrontendWeights, ModelParams};
use crate::num::{lit, Real};

use super::grad::{
    adopt_running_stats, batch_backward, batch_predict, make_dropout_mask, prepare_item,
    PreparedItem,
};
use super::loss::{adaptive_alpha, class_weights};
use super::optim::{cosine_decay, cosine_lr, AdamW, Phase};
use super::{FilterFeedback, TrainConfig};

/// One labelled training clip, optionally with a teacher row.
#[derive(Debug, Clone)]
pub struct TrainItem<F> {
    pub samples: Vec<F>,
    pub label: usize,
    pub teacher: Option<Vec<F>>,
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub train_loss: f64,
    pub focal: f64,
    pub soft: f64,
    pub val_acc: f64,
    pub breakpoint: f64,
    pub width: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn tsv_header() -> &'static str {
        "epoch\tphase\ttrain_loss\tfocal\tsoft\tval_acc\tbreakpoint_hz\twidth\tlr"
    }

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.3}\t{:.6}\t{:.3e}",
            self.epoch,
            self.phase,
            self.train_loss,
            self.focal,
            self.soft,
            self.val_acc,
            self.breakpoint,
            self.width,
            self.lr
        )
    }
}

/// Outcome of a training run. The model passed to [`run_schedule`] is
/// left at the best-validation snapshot.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub final_train_acc: f64,
    pub stopped_early: bool,
}

/// Expands the phase layout over the full epoch budget: leading joint
/// warmup, alternating network/filter cycles, trailing joint
/// refinement. Zero-length cycles degenerate to joint training
/// throughout.
pub fn phase_schedule(cfg: &TrainConfig) -> Vec<Phase> {
    let total = cfg.epochs;
    let warm = cfg.warmup_epochs.min(total);
    let refine = cfg.refine_epochs.min(total - warm);
    let middle = total - warm - refine;
    let mut phases = vec![Phase::Joint; warm];
    let cycle = cfg.cycle_network + cfg.cycle_filter;
    if cycle == 0 {
        phases.extend(std::iter::repeat(Phase::Joint).take(middle));
    } else {
        for i in 0..middle {
            let pos = i % cycle;
            phases.push(if pos < cfg.cycle_network {
                Phase::Network
            } else {
                Phase::Filter
            });
        }
    }
    phases.extend(std::iter::repeat(Phase::Joint).take(refine));
    phases
}

/// Waveform augmentation: time shift up to ±100 ms, gain jitter up to
/// ±6 dB, additive Gaussian noise at a signal-to-noise ratio of at
/// least 20 dB.
pub fn augment_samples<F: Real>(samples: &[F], sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<F> {
    let max_shift = (sample_rate as f64 * 0.1) as i64;
    let shift = rng.gen_range(-max_shift..=max_shift);
    let gain_db = rng.gen_range(-6.0..=6.0);
    let gain: F = lit(10f64.powf(gain_db / 20.0));
    let n = samples.len() as i64;
    let mut out = vec![F::zero(); samples.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let src = i as i64 - shift;
        if src >= 0 && src < n {
            *o = samples[src as usize] * gain;
        }
    }
    let rms = (out.iter().map(|v| *v * *v).sum::<F>()
        / lit::<F>(samples.len().max(1) as f64))
    .sqrt();
    if rms > F::zero() {
        let snr_db = rng.gen_range(20.0..=40.0);
        let std = rms.to_f64().unwrap() * 10f64.powf(-snr_db / 20.0);
        let dist = Normal::new(0.0, std).expect("finite noise std");
        for o in &mut out {
            *o = *o + lit::<F>(dist.sample(rng));
        }
    }
    out
}

/// Mean prediction accuracy over prepared items, evaluated in batches
/// with frozen statistics.
pub fn eval_accuracy<F: Real>(
    model: &ModelParams<F>,
    items: &[PreparedItem<F>],
    batch: usize,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::data("empty evaluation split".to_string()));
    }
    let mut correct = 0usize;
    for chunk in items.chunks(batch.max(1)) {
        let preds = batch_predict(model, chunk)?;
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|(p, item)| **p == item.label)
            .count();
    }
    Ok(correct as f64 / items.len() as f64)
}

fn filter_values<F: Real>(model: &ModelParams<F>) -> (f64, f64) {
    match &model.frontend {
        FrontendWeights::Semi { breakpoint, width } => {
            (breakpoint.to_f64().unwrap(), width.to_f64().unwrap())
        }
        _ => (f64::NAN, f64::NAN),
    }
}

fn set_filter_values<F: Real>(model: &mut ModelParams<F>, b: f64, w: f64) {
    if let FrontendWeights::Semi { breakpoint, width } = &mut model.frontend {
        *breakpoint = lit(b);
        *width = lit(w);
    }
}

fn clamp_filter<F: Real>(model: &mut ModelParams<F>) {
    if let FrontendWeights::Semi { breakpoint, width } = &mut model.frontend {
        let mut p = model.config.filterbank_params(*breakpoint, *width);
        p.clamp_learnable();
        *breakpoint = p.breakpoint;
        *width = p.width;
    }
}

/// Trains in place. Runs the phase schedule with cosine-annealed
/// learning rates, early stopping, and per-epoch logging through
/// `on_epoch`; afterwards the model holds the best-validation
/// parameters.
pub fn run_schedule<F: Real>(
    model: &mut ModelParams<F>,
    train: &[TrainItem<F>],
    val: &[TrainItem<F>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("empty training split".to_string()));
    }
    if val.is_empty() {
        return Err(Error::data("empty validation split".to_string()));
    }
    let k = model.config.num_classes();
    let mut counts = vec![0usize; k];
    for item in train {
        if item.label >= k {
            return Err(Error::data(format!(
                "label {} out of range for {k} classes",
                item.label
            )));
        }
        counts[item.label] += 1;
    }
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::data(
            "training split must contain at least two classes".to_string(),
        ));
    }
    let weights: Vec<F> = class_weights(&counts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stft: Stft<F> = Stft::new(model.config.n_fft, model.config.hop)?;
    let prep = |stft: &mut Stft<F>, it: &TrainItem<F>| {
        prepare_item(stft, &model.config, &it.samples, it.label, it.teacher.clone())
    };
    let val_items: Vec<PreparedItem<F>> = val
        .iter()
        .map(|it| prep(&mut stft, it))
        .collect::<Result<_>>()?;
    let base_items: Vec<PreparedItem<F>> = train
        .iter()
        .map(|it| prep(&mut stft, it))
        .collect::<Result<_>>()?;

    let schedule = phase_schedule(cfg);
    let mut opt = AdamW::new(model, cfg);
    let c_out = model.blocks.last().unwrap().c_out;

    let mut running_alpha = F::zero();
    let mut records = Vec::with_capacity(schedule.len());
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.clone();
    let mut last_val_acc = 0.0f64;
    let mut pre_filter: Option<(f64, f64, f64)> = None;
    let mut last_perturb: Option<usize> = None;
    let mut perturb_sign = 1.0f64;
    let mut stopped_early = false;
    let mut prev_phase: Option<Phase> = None;

    for (epoch, &phase) in schedule.iter().enumerate() {
        let lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
        let noise_std = if phase == Phase::Filter {
            cfg.grad_noise_std * cosine_decay(epoch, cfg.epochs)
        } else {
            0.0
        };

        if phase == Phase::Filter && prev_phase != Some(Phase::Filter) {
            pre_filter = Some({
                let (b, w) = filter_values(model);
                (b, w, last_val_acc)
            });
            opt.reset_filter_moments();
            let due = last_perturb.map_or(epoch >= cfg.perturb_every, |lp| {
                epoch - lp >= cfg.perturb_every
            });
            if due && cfg.perturb_frac > 0.0 {
                let (b, w) = filter_values(model);
                let f = 1.0 + perturb_sign * cfg.perturb_frac;
                set_filter_values(model, b * f, w * f);
                clamp_filter(model);
                perturb_sign = -perturb_sign;
                last_perturb = Some(epoch);
            }
        }

        // one pass over the shuffled training set
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let epoch_items: Vec<PreparedItem<F>> = if cfg.augment {
            order
                .iter()
                .map(|&i| {
                    let aug = augment_samples(&train[i].samples, model.config.sample_rate, &mut rng);
                    prepare_item(
                        &mut stft,
                        &model.config,
                        &aug,
                        train[i].label,
                        train[i].teacher.clone(),
                    )
                })
                .collect::<Result<_>>()?
        } else {
            order.iter().map(|&i| base_items[i].clone()).collect()
        };

        let mut loss_sum = 0.0f64;
        let mut focal_sum = 0.0f64;
        let mut soft_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in epoch_items.chunks(cfg.batch_size) {
            // adapt the distillation mix from this batch's teacher
            // confidence before weighting its loss
            let confs: Vec<F> = chunk
                .iter()
                .filter_map(|it| {
                    it.teacher
                        .as_ref()
                        .map(|t| t.iter().cloned().fold(F::neg_infinity(), F::max))
                })
                .collect();
            if !confs.is_empty() {
                let mean = confs.iter().cloned().sum::<F>() / lit::<F>(confs.len() as f64);
                running_alpha = adaptive_alpha(mean, running_alpha, cfg);
            }
            let mask = if phase == Phase::Filter {
                // filter epochs measure the frontend, not a noisy net
                None
            } else {
                make_dropout_mask(chunk.len(), chunk[0].frames, c_out, cfg.dropout, &mut rng)
            };
            let out = batch_backward(model, chunk, cfg, running_alpha, &weights, mask.as_ref())?;
            opt.step(model, &out.tape, phase, lr, noise_std, &mut rng)?;
            adopt_running_stats(model, &out.running);
            loss_sum += out.diags.loss_sum.to_f64().unwrap();
            focal_sum += out.diags.focal_mean.to_f64().unwrap() * out.diags.items as f64;
            soft_sum += out.diags.soft_mean.to_f64().unwrap() * out.diags.items as f64;
            seen += out.diags.items;
        }

        let val_acc = eval_accuracy(model, &val_items, cfg.batch_size)?;
        let (b_now, w_now) = filter_values(model);
        let record = EpochRecord {
            epoch,
            phase: phase.name(),
            train_loss: loss_sum / seen as f64,
            focal: focal_sum / seen as f64,
            soft: soft_sum / seen as f64,
            val_acc,
            breakpoint: b_now,
            width: w_now,
            lr,
        };
        on_epoch(&record);
        records.push(record);

        // validation feedback at the end of each filter phase
        let filter_phase_ends = phase == Phase::Filter
            && (epoch + 1 == schedule.len() || schedule[epoch + 1] != Phase::Filter);
        if filter_phase_ends {
            if let Some((b0, w0, acc0)) = pre_filter.take() {
                if acc0 > 0.0 && val_acc < (1.0 - cfg.feedback_tolerance) * acc0 {
                    match cfg.feedback {
                        FilterFeedback::Reject => {
                            set_filter_values(model, b0, w0);
                            opt.reset_filter_moments();
                        }
                        FilterFeedback::Bound => {
                            let tol = cfg.feedback_tolerance;
                            let b = b_now.clamp(b0 * (1.0 - tol), b0 * (1.0 + tol));
                            let w = w_now.clamp(w0 * (1.0 - tol), w0 * (1.0 + tol));
                            set_filter_values(model, b, w);
                        }
                    }
                    clamp_filter(model);
                }
            }
        }

        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_params = model.clone();
        } else if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
        last_val_acc = val_acc;
        prev_phase = Some(phase);
    }

    *model = best_params;
    let final_train_acc = eval_accuracy(model, &base_items, cfg.batch_size)?;
    Ok(TrainSummary {
        epochs_run: records.len(),
        best_val_acc: best_val,
        best_epoch,
        final_train_acc,
        stopped_early,
        records,
    })
}
