//! Reverse-mode differentiation of the whole pipeline: classifier back
//! through attention, GRU, encoder, log compression and the filterbank
//! into (breakpoint, width) — or the dense matrix for the fully
//! learnable frontend.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encoder_backward, encoder_forward_batch, EncoderCache, Mode, Seq3};
use crate::error::{Error, Result};
use crate::frontend::{
    build_filterbank_grad, log_compress, FilterbankGrad, FilterbankMatrix, Stft, LOG_EPSILON,
};
use crate::head::{head_backward, head_forward, HeadCache};
use crate::model::{FrontendWeights, ModelConfig, ModelParams, ParamGroup};
use crate::num::{lit, Real};

use super::loss::{focal_grad, focal_loss, soft_distill_grad, soft_distill_loss};
use super::TrainConfig;

/// One training example with its spectral work already done. The power
/// spectrogram is fixed under every trainable parameter, so it is
/// computed once per (possibly augmented) waveform.
#[derive(Debug, Clone)]
pub struct PreparedItem<F> {
    /// `frames x n_freqs`, row-major.
    pub power: Vec<F>,
    pub frames: usize,
    pub label: usize,
    /// Teacher probability vector over the model's classes.
    pub teacher: Option<Vec<F>>,
}

/// Computes the power spectrogram of one clip. Clips shorter than one
/// analysis window are zero-padded to a single frame, matching the
/// streaming runtime.
pub fn prepare_item<F: Real>(
    stft: &mut Stft<F>,
    config: &ModelConfig,
    samples: &[F],
    label: usize,
    teacher: Option<Vec<F>>,
) -> Result<PreparedItem<F>> {
    if label >= config.num_classes() {
        return Err(Error::data(format!(
            "label {label} out of range for {} classes",
            config.num_classes()
        )));
    }
    if let Some(t) = &teacher {
        if t.len() != config.num_classes() {
            return Err(Error::shape(format!(
                "teacher row has {} entries, expected {}",
                t.len(),
                config.num_classes()
            )));
        }
    }
    let power = if stft.frame_count(samples.len()) == 0 {
        let mut padded = samples.to_vec();
        padded.resize(config.n_fft, F::zero());
        stft.power_spectrogram(&padded)
    } else {
        stft.power_spectrogram(samples)
    };
    let frames = power.len() / config.n_freqs();
    Ok(PreparedItem {
        power,
        frames,
        label,
        teacher,
    })
}

/// Per-parameter gradient sums for one batch, shaped exactly like the
/// model registry; the filter-parameter gradients live in the frontend
/// slot. Sums (not means) keep the tape linear in the batch: feeding
/// the batch twice doubles every entry.
#[derive(Debug, Clone)]
pub struct GradientTape<F> {
    pub grads: ModelParams<F>,
    pub items: usize,
}

impl<F: Real> GradientTape<F> {
    /// The (breakpoint, width) gradient pair when the frontend is
    /// semi-learnable.
    pub fn filter_grads(&self) -> Option<(F, F)> {
        match &self.grads.frontend {
            FrontendWeights::Semi { breakpoint, width } => Some((*breakpoint, *width)),
            _ => None,
        }
    }

    fn assert_finite(&self) -> Result<()> {
        let mut bad: Option<String> = None;
        self.grads.visit(&mut |info, data| {
            if bad.is_none() && data.iter().any(|v| !v.is_finite()) {
                bad = Some(info.path.clone());
            }
        });
        match bad {
            Some(path) => Err(Error::Numeric(format!(
                "non-finite gradient in {path}; step aborted"
            ))),
            None => Ok(()),
        }
    }
}

/// Scalar summary of one batch.
#[derive(Debug, Clone, Copy)]
pub struct TapeDiagnostics<F> {
    pub loss_sum: F,
    pub loss_mean: F,
    pub focal_mean: F,
    pub soft_mean: F,
    /// Effective distillation mix used for this batch.
    pub alpha: F,
    /// Items whose label probability hit the numeric floor.
    pub clamped: usize,
    pub items: usize,
}

/// Everything a training step needs from one backward pass.
#[derive(Debug)]
pub struct BatchOutput<F> {
    pub tape: GradientTape<F>,
    pub diags: TapeDiagnostics<F>,
    /// Updated normalization statistics per block, to adopt after the
    /// optimizer step.
    pub running: Vec<(Vec<F>, Vec<F>)>,
}

struct FrontCtx<F> {
    bank: FilterbankMatrix<F>,
    grad: Option<FilterbankGrad<F>>,
}

fn build_front<F: Real>(model: &ModelParams<F>, need_grad: bool) -> Result<FrontCtx<F>> {
    if need_grad {
        if let FrontendWeights::Semi { .. } = &model.frontend {
            let (bank, grad) = build_filterbank_grad(&model.filterbank_params())?;
            return Ok(FrontCtx {
                bank,
                grad: Some(grad),
            });
        }
    }
    Ok(FrontCtx {
        bank: model.materialize_bank()?,
        grad: None,
    })
}

struct BatchForward<F> {
    /// Pre-compression filterbank outputs, `(B, T, n_bins)`.
    ys: Seq3<F>,
    enc_cache: EncoderCache<F>,
    /// Post-dropout encoder outputs fed to the head, per item.
    frames: Vec<Vec<Vec<F>>>,
    heads: Vec<HeadCache<F>>,
}

fn forward_batch<F: Real>(
    model: &ModelParams<F>,
    items: &[PreparedItem<F>],
    mode: Mode,
    dropout_mask: Option<&Seq3<F>>,
    front: &FrontCtx<F>,
) -> Result<BatchForward<F>> {
    if items.is_empty() {
        return Err(Error::data("empty batch".to_string()));
    }
    let t_len = items[0].frames;
    if items.iter().any(|it| it.frames != t_len) {
        return Err(Error::shape("batch items have unequal frame counts".to_string()));
    }
    let (b_len, n_bins, n_freqs) = (items.len(), model.config.n_bins, model.config.n_freqs());

    let mut ys = Seq3::zeros(b_len, t_len, n_bins);
    let mut feats = Seq3::zeros(b_len, t_len, n_bins);
    for (bi, item) in items.iter().enumerate() {
        for t in 0..t_len {
            let row = &item.power[t * n_freqs..(t + 1) * n_freqs];
            front.bank.apply(row, ys.at_mut(bi, t));
            for (f, &y) in feats.at_mut(bi, t).iter_mut().zip(ys.at(bi, t)) {
                *f = log_compress(y);
            }
        }
    }

    let (mut enc, enc_cache) = encoder_forward_batch(model, &feats, mode);
    if let Some(mask) = dropout_mask {
        debug_assert_eq!(mask.data.len(), enc.data.len());
        for (v, m) in enc.data.iter_mut().zip(&mask.data) {
            *v = *v * *m;
        }
    }

    let mut frames = Vec::with_capacity(b_len);
    let mut heads = Vec::with_capacity(b_len);
    for bi in 0..b_len {
        let item_frames: Vec<Vec<F>> = (0..t_len).map(|t| enc.at(bi, t).to_vec()).collect();
        heads.push(head_forward(model, &item_frames));
        frames.push(item_frames);
    }
    Ok(BatchForward {
        ys,
        enc_cache,
        frames,
        heads,
    })
}

fn teacher_logits<F: Real>(probs: &[F]) -> Vec<F> {
    probs.iter().map(|&p| p.max(lit(1e-12)).ln()).collect()
}

/// Per-item losses and (optionally) logit gradients. Gradients are
/// accumulated unscaled, so the tape is the batch sum.
fn batch_losses<F: Real>(
    items: &[PreparedItem<F>],
    heads: &[HeadCache<F>],
    cfg: &TrainConfig,
    alpha_eff: F,
    weights: &[F],
    want_grads: bool,
) -> Result<(TapeDiagnostics<F>, Vec<Vec<F>>)> {
    let mut loss_sum = F::zero();
    let mut focal_sum = F::zero();
    let mut soft_sum = F::zero();
    let mut clamped = 0usize;
    let mut dlogits = Vec::new();
    let t_temp: F = lit(cfg.temperature);
    let gamma: F = lit(cfg.gamma);
    for (item, head) in items.iter().zip(heads) {
        let logits = &head.logits;
        let mut probs = logits.clone();
        crate::num::softmax_in_place(&mut probs);
        let weight = weights[item.label];
        let (lf, was_clamped) = focal_loss(&probs, item.label, gamma, weight)?;
        clamped += was_clamped as usize;

        let teacher = item.teacher.as_ref().and_then(|p| {
            let max = p.iter().cloned().fold(F::neg_infinity(), F::max);
            (max >= lit(cfg.teacher_threshold)).then(|| teacher_logits(p))
        });
        let (alpha_i, ls) = match &teacher {
            Some(tl) => (alpha_eff, soft_distill_loss(logits, tl, t_temp)?),
            None => (F::zero(), F::zero()),
        };
        loss_sum = loss_sum + (F::one() - alpha_i) * lf + alpha_i * ls;
        focal_sum = focal_sum + lf;
        soft_sum = soft_sum + ls;

        if want_grads {
            let mut dl = vec![F::zero(); logits.len()];
            focal_grad(&probs, item.label, gamma, weight, F::one() - alpha_i, &mut dl);
            if let Some(tl) = &teacher {
                soft_distill_grad(logits, tl, t_temp, alpha_i, &mut dl);
            }
            dlogits.push(dl);
        }
    }
    let n: F = lit(items.len() as f64);
    Ok((
        TapeDiagnostics {
            loss_sum,
            loss_mean: loss_sum / n,
            focal_mean: focal_sum / n,
            soft_mean: soft_sum / n,
            alpha: alpha_eff,
            clamped,
            items: items.len(),
        },
        dlogits,
    ))
}

/// Forward-only batch loss (used for validation and for the
/// finite-difference oracle). `Mode::Train` uses batch normalization
/// statistics; `Mode::Eval` the frozen running ones.
pub fn batch_loss<F: Real>(
    model: &ModelParams<F>,
    items: &[PreparedItem<F>],
    cfg: &TrainConfig,
    alpha_eff: F,
    weights: &[F],
    mode: Mode,
    dropout_mask: Option<&Seq3<F>>,
) -> Result<TapeDiagnostics<F>> {
    let front = build_front(model, false)?;
    let fwd = forward_batch(model, items, mode, dropout_mask, &front)?;
    let (diags, _) = batch_losses(items, &fwd.heads, cfg, alpha_eff, weights, false)?;
    Ok(diags)
}

/// Forward-only class predictions (argmax per item) in eval mode.
pub fn batch_predict<F: Real>(
    model: &ModelParams<F>,
    items: &[PreparedItem<F>],
) -> Result<Vec<usize>> {
    let front = build_front(model, false)?;
    let fwd = forward_batch(model, items, Mode::Eval, None, &front)?;
    Ok(fwd
        .heads
        .iter()
        .map(|h| {
            let mut best = 0;
            for (i, v) in h.logits.iter().enumerate() {
                if *v > h.logits[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Full backward pass over one batch in train mode. Gradients cover
/// every trainable registry entry, including the filter parameters via
/// the continuous warp. Aborts with a numeric error if any gradient
/// comes out non-finite.
pub fn batch_backward<F: Real>(
    model: &ModelParams<F>,
    items: &[PreparedItem<F>],
    cfg: &TrainConfig,
    alpha_eff: F,
    weights: &[F],
    dropout_mask: Option<&Seq3<F>>,
) -> Result<BatchOutput<F>> {
    let front = build_front(model, true)?;
    let fwd = forward_batch(model, items, Mode::Train, dropout_mask, &front)?;
    let (diags, dlogits) = batch_losses(items, &fwd.heads, cfg, alpha_eff, weights, true)?;
    if !diags.loss_sum.is_finite() {
        return Err(Error::Numeric("non-finite batch loss; step aborted".to_string()));
    }

    let mut grads = model.zeros_like();
    let (b_len, t_len) = (items.len(), items[0].frames);
    let c_out = model.blocks.last().unwrap().c_out;

    // head backward per item, gathered into one encoder-output gradient
    let mut d_enc = Seq3::zeros(b_len, t_len, c_out);
    for bi in 0..b_len {
        let dframes = head_backward(model, &fwd.frames[bi], &fwd.heads[bi], &dlogits[bi], &mut grads);
        for (t, df) in dframes.iter().enumerate() {
            d_enc.at_mut(bi, t).copy_from_slice(df);
        }
    }
    if let Some(mask) = dropout_mask {
        for (v, m) in d_enc.data.iter_mut().zip(&mask.data) {
            *v = *v * *m;
        }
    }

    let dfeats = encoder_backward(model, &fwd.enc_cache, &d_enc, &mut grads);

    // through log compression into the filterbank weights
    let n_freqs = model.config.n_freqs();
    let n_bins = model.config.n_bins;
    let eps: F = lit(LOG_EPSILON);
    match &mut grads.frontend {
        FrontendWeights::Fixed => {}
        FrontendWeights::Semi { breakpoint, width } => {
            let mut d_w = vec![F::zero(); n_bins * n_freqs];
            for (bi, item) in items.iter().enumerate() {
                for t in 0..t_len {
                    let dfeat = dfeats.at(bi, t);
                    let y = fwd.ys.at(bi, t);
                    let power = &item.power[t * n_freqs..(t + 1) * n_freqs];
                    for i in 0..n_bins {
                        if y[i] <= F::zero() {
                            continue;
                        }
                        let dy = dfeat[i] / (y[i] + eps);
                        if dy == F::zero() {
                            continue;
                        }
                        let (k0, k1) = front.bank.support[i];
                        for k in k0..k1 {
                            d_w[i * n_freqs + k] = d_w[i * n_freqs + k] + dy * power[k];
                        }
                    }
                }
            }
            let grad = front.grad.as_ref().expect("semi frontend gradient");
            let (db, dw) = grad.fold(&front.bank, |i, k| d_w[i * n_freqs + k]);
            *breakpoint = db;
            *width = dw;
        }
        FrontendWeights::Full { matrix } => {
            for (bi, item) in items.iter().enumerate() {
                for t in 0..t_len {
                    let dfeat = dfeats.at(bi, t);
                    let y = fwd.ys.at(bi, t);
                    let power = &item.power[t * n_freqs..(t + 1) * n_freqs];
                    for i in 0..n_bins {
                        if y[i] <= F::zero() {
                            continue;
                        }
                        let dy = dfeat[i] / (y[i] + eps);
                        let row = &mut matrix[i * n_freqs..(i + 1) * n_freqs];
                        for (m, &p) in row.iter_mut().zip(power) {
                            *m = *m + dy * p;
                        }
                    }
                }
            }
        }
    }

    let tape = GradientTape {
        grads,
        items: items.len(),
    };
    tape.assert_finite()?;
    let running = fwd
        .enc_cache
        .blocks
        .iter()
        .map(|b| b.new_running.clone().expect("train mode caches running stats"))
        .collect();
    Ok(BatchOutput {
        tape,
        diags,
        running,
    })
}

/// Writes freshly computed normalization statistics into the model.
pub fn adopt_running_stats<F: Real>(model: &mut ModelParams<F>, running: &[(Vec<F>, Vec<F>)]) {
    for (block, (mean, var)) in model.blocks.iter_mut().zip(running) {
        block.running_mean.copy_from_slice(mean);
        block.running_var.copy_from_slice(var);
    }
}

/// Inverted-dropout mask over encoder outputs, or `None` when disabled.
pub fn make_dropout_mask<F: Real>(
    batch: usize,
    frames: usize,
    channels: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Seq3<F>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = lit::<F>(1.0 / (1.0 - rate));
    let mut mask = Seq3::zeros(batch, frames, channels);
    for v in &mut mask.data {
        *v = if rng.gen::<f64>() < rate { F::zero() } else { keep };
    }
    Some(mask)
}

/// Central finite-difference verification of every trainable gradient.
/// Returns the worst relative error across all parameters.
pub fn check_gradients(
    model: &ModelParams<f64>,
    items: &[PreparedItem<f64>],
    cfg: &TrainConfig,
    alpha_eff: f64,
    weights: &[f64],
) -> Result<f64> {
    let out = batch_backward(model, items, cfg, alpha_eff, weights, None)?;
    let analytic = out.tape.grads.flatten_trainable();
    let theta = model.flatten_trainable();

    // map flat offsets to parameter groups for step-size selection
    let mut group = Vec::with_capacity(theta.len());
    for info in model.tensor_infos() {
        if info.trainable {
            group.extend(std::iter::repeat(info.group).take(info.len));
        }
    }
    debug_assert_eq!(group.len(), theta.len());

    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for idx in 0..theta.len() {
        // filter parameters sit on a piecewise-smooth surface whose
        // kinks are spaced by whole FFT cells; tiny steps stay inside
        // one smooth piece
        let h = match group[idx] {
            ParamGroup::Filter => 1e-6 * theta[idx].abs().max(1.0),
            ParamGroup::Network => 1e-5 * theta[idx].abs().max(1.0),
        };
        let mut flat = theta.clone();
        flat[idx] = theta[idx] + h;
        probe.unflatten_trainable(&flat)?;
        let up = batch_loss(&probe, items, cfg, alpha_eff, weights, Mode::Train, None)?.loss_sum;
        flat[idx] = theta[idx] - h;
        probe.unflatten_trainable(&flat)?;
        let down = batch_loss(&probe, items, cfg, alpha_eff, weights, Mode::Train, None)?.loss_sum;
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[idx].abs()).max(1e-6);
        let rel = (analytic[idx] - fd).abs() / scale;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
