//! Causal convolutional encoder: three depthwise-separable blocks with
//! dilated temporal kernels, causal squeeze-excitation, per-channel
//! normalization, and skip connections. Stride 1 throughout, so frame
//! count is always preserved.
//!
//! Two execution paths share the same parameters: a frame-at-a-time
//! streaming path carrying explicit left context, and a batch path for
//! training that caches every intermediate needed by the hand-written
//! backward pass. Batch normalization uses batch statistics during
//! training and frozen running statistics everywhere else, which is
//! what makes the streaming path state-only.

use crate::model::{ConvBlock, ModelParams};
use crate::num::{lit, matvec, matvec_t_accum, outer_accum, sigmoid, Real};

/// Normalization epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate during training.
pub const BN_MOMENTUM: f64 = 0.1;

/// Dense rank-3 array, row-major `[batch][frame][channel]`.
#[derive(Debug, Clone)]
pub struct Seq3<F> {
    pub data: Vec<F>,
    pub batch: usize,
    pub frames: usize,
    pub channels: usize,
}

impl<F: Real> Seq3<F> {
    pub fn zeros(batch: usize, frames: usize, channels: usize) -> Self {
        Seq3 {
            data: vec![F::zero(); batch * frames * channels],
            batch,
            frames,
            channels,
        }
    }

    pub fn from_data(data: Vec<F>, batch: usize, frames: usize, channels: usize) -> Self {
        assert_eq!(data.len(), batch * frames * channels);
        Seq3 {
            data,
            batch,
            frames,
            channels,
        }
    }

    #[inline]
    pub fn at(&self, b: usize, t: usize) -> &[F] {
        let i = (b * self.frames + t) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, t: usize) -> &mut [F] {
        let i = (b * self.frames + t) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Forward mode: training uses batch statistics (and records updated
/// running statistics in the cache); evaluation uses frozen ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-block intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    pub x_in: Seq3<F>,
    pub y_dw: Seq3<F>,
    pub z_pw: Seq3<F>,
    /// Causal running channel mean m_t (inclusive of frame t).
    pub se_mean: Seq3<F>,
    /// SE bottleneck pre-activation W1 * m_t.
    pub se_hidden: Seq3<F>,
    /// SE gates in (0,1).
    pub se_gate: Seq3<F>,
    pub bn_mean: Vec<F>,
    pub bn_var: Vec<F>,
    pub x_hat: Seq3<F>,
    /// Pre-relu normalized activations (relu mask source).
    pub preact: Seq3<F>,
    /// Updated running statistics (training mode only); applied to the
    /// model by the training loop after the optimizer step.
    pub new_running: Option<(Vec<F>, Vec<F>)>,
}

/// Everything the encoder backward needs, in block order.
#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    pub proj_in: Seq3<F>,
    pub blocks: Vec<BlockCache<F>>,
}

/// Streaming carry for one block: the `(k-1)*d` most recent pre-block
/// frames (oldest first) plus the causal SE pooling accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState<F> {
    pub carry: Vec<F>,
    pub se_count: u64,
    pub se_mean: Vec<F>,
}

/// Streaming carries for the whole encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<F> {
    pub blocks: Vec<BlockState<F>>,
}

impl<F: Real> EncoderState<F> {
    pub fn fresh(model: &ModelParams<F>) -> Self {
        EncoderState {
            blocks: model
                .blocks
                .iter()
                .map(|b| BlockState {
                    carry: vec![F::zero(); b.left_context() * b.c_in],
                    se_count: 0,
                    se_mean: vec![F::zero(); b.c_out],
                })
                .collect(),
        }
    }
}

/// Reusable per-frame temporaries for the streaming path.
#[derive(Debug, Clone)]
pub struct EncoderScratch<F> {
    a: Vec<F>,
    b: Vec<F>,
    hidden: Vec<F>,
    gate: Vec<F>,
}

impl<F: Real> EncoderScratch<F> {
    pub fn new(model: &ModelParams<F>) -> Self {
        let cmax = model
            .blocks
            .iter()
            .flat_map(|b| [b.c_in, b.c_out])
            .chain([model.config.n_bins, model.input_proj.out_dim])
            .max()
            .unwrap();
        let hmax = model.blocks.iter().map(|b| b.se_hidden).max().unwrap();
        EncoderScratch {
            a: vec![F::zero(); cmax],
            b: vec![F::zero(); cmax],
            hidden: vec![F::zero(); hmax],
            gate: vec![F::zero(); cmax],
        }
    }

    /// Bytes of transient working memory this scratch occupies.
    pub fn byte_size(&self) -> usize {
        (self.a.len() + self.b.len() + self.hidden.len() + self.gate.len())
            * std::mem::size_of::<F>()
    }
}

#[inline]
fn dw_tap_lag(kernel: usize, dilation: usize, j: usize) -> usize {
    (kernel - 1 - j) * dilation
}

/// One streaming step: log-energy frame in, encoder frame out.
/// Normalization uses the frozen running statistics.
pub fn encoder_step<F: Real>(
    model: &ModelParams<F>,
    state: &mut EncoderState<F>,
    features: &[F],
    out: &mut [F],
    scratch: &mut EncoderScratch<F>,
) {
    debug_assert_eq!(features.len(), model.config.n_bins);
    debug_assert_eq!(out.len(), model.blocks.last().unwrap().c_out);

    // input projection
    let c1 = model.input_proj.out_dim;
    model.input_proj.forward(features, &mut scratch.a[..c1]);

    let mut cur = 0usize; // which scratch buffer holds the block input
    for (block, bs) in model.blocks.iter().zip(&mut state.blocks) {
        let (x, y) = if cur == 0 {
            (&mut scratch.a, &mut scratch.b)
        } else {
            (&mut scratch.b, &mut scratch.a)
        };
        step_block(block, bs, &x[..block.c_in], &mut y[..block.c_out], &mut scratch.hidden, &mut scratch.gate);
        cur ^= 1;
    }
    let last = if cur == 0 { &scratch.a } else { &scratch.b };
    out.copy_from_slice(&last[..out.len()]);
}

fn step_block<F: Real>(
    block: &ConvBlock<F>,
    bs: &mut BlockState<F>,
    x: &[F],
    out: &mut [F],
    hidden: &mut [F],
    gate: &mut [F],
) {
    let c_in = block.c_in;
    let c_out = block.c_out;
    let k = block.kernel;
    let ctx = block.left_context();

    // depthwise: tap k-1 is the current frame, earlier taps read the carry
    let mut y = vec![F::zero(); c_in];
    for c in 0..c_in {
        let mut acc = block.dw_bias[c];
        for j in 0..k {
            let lag = dw_tap_lag(k, block.dilation, j);
            let v = if lag == 0 {
                x[c]
            } else if lag <= ctx {
                bs.carry[(ctx - lag) * c_in + c]
            } else {
                F::zero()
            };
            acc = acc + block.dw_weight[c * k + j] * v;
        }
        y[c] = acc;
    }
    // push the pre-block frame into the carry
    if ctx > 0 {
        bs.carry.copy_within(c_in.., 0);
        let start = (ctx - 1) * c_in;
        bs.carry[start..].copy_from_slice(x);
    }

    // pointwise
    let mut z = vec![F::zero(); c_out];
    block.pw.forward(&y, &mut z);

    // causal SE: update the running mean first so m_t includes frame t
    bs.se_count += 1;
    let inv = F::one() / F::from_u64(bs.se_count).unwrap();
    for c in 0..c_out {
        bs.se_mean[c] = bs.se_mean[c] + (z[c] - bs.se_mean[c]) * inv;
    }
    let h = block.se_hidden;
    matvec(&block.se_reduce, &bs.se_mean, h, c_out, &mut hidden[..h]);
    for v in hidden[..h].iter_mut() {
        *v = v.max(F::zero());
    }
    matvec(&block.se_expand, &hidden[..h], c_out, h, &mut gate[..c_out]);

    // norm (frozen stats) -> relu -> skip
    let eps = lit::<F>(BN_EPS);
    for c in 0..c_out {
        let s = z[c] * sigmoid(gate[c]);
        let xh = (s - block.running_mean[c]) / (block.running_var[c] + eps).sqrt();
        let pre = block.norm_scale[c] * xh + block.norm_shift[c];
        out[c] = pre.max(F::zero());
    }
    match &block.skip {
        Some(proj) => {
            let mut sk = vec![F::zero(); c_out];
            proj.forward(x, &mut sk);
            for c in 0..c_out {
                out[c] = out[c] + sk[c];
            }
        }
        None => {
            for c in 0..c_out {
                out[c] = out[c] + x[c];
            }
        }
    }
}

/// Batch forward over whole sequences. Returns the output sequence and
/// the cache consumed by [`encoder_backward`].
pub fn encoder_forward_batch<F: Real>(
    model: &ModelParams<F>,
    features: &Seq3<F>,
    mode: Mode,
) -> (Seq3<F>, EncoderCache<F>) {
    assert_eq!(features.channels, model.config.n_bins);
    let (b, t) = (features.batch, features.frames);

    // input projection
    let c1 = model.input_proj.out_dim;
    let mut x = Seq3::zeros(b, t, c1);
    for bi in 0..b {
        for ti in 0..t {
            model.input_proj.forward(features.at(bi, ti), x.at_mut(bi, ti));
        }
    }

    let mut blocks = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let (y, cache) = forward_block(block, x, mode);
        blocks.push(cache);
        x = y;
    }
    (
        x,
        EncoderCache {
            proj_in: features.clone(),
            blocks,
        },
    )
}

fn forward_block<F: Real>(block: &ConvBlock<F>, x: Seq3<F>, mode: Mode) -> (Seq3<F>, BlockCache<F>) {
    let (b, t) = (x.batch, x.frames);
    let (c_in, c_out) = (block.c_in, block.c_out);
    let k = block.kernel;
    let d = block.dilation;

    // depthwise (zeros before each clip's start)
    let mut y_dw = Seq3::zeros(b, t, c_in);
    for bi in 0..b {
        for ti in 0..t {
            let out = (bi * t + ti) * c_in;
            for c in 0..c_in {
                let mut acc = block.dw_bias[c];
                for j in 0..k {
                    let lag = dw_tap_lag(k, d, j);
                    if lag <= ti {
                        acc = acc + block.dw_weight[c * k + j] * x.at(bi, ti - lag)[c];
                    }
                }
                y_dw.data[out + c] = acc;
            }
        }
    }

    // pointwise
    let mut z_pw = Seq3::zeros(b, t, c_out);
    for bi in 0..b {
        for ti in 0..t {
            block.pw.forward(y_dw.at(bi, ti), z_pw.at_mut(bi, ti));
        }
    }

    // causal SE
    let h = block.se_hidden;
    let mut se_mean = Seq3::zeros(b, t, c_out);
    let mut se_hidden = Seq3::zeros(b, t, h);
    let mut se_gate = Seq3::zeros(b, t, c_out);
    let mut s_se = Seq3::zeros(b, t, c_out);
    let mut gate_pre = vec![F::zero(); c_out];
    for bi in 0..b {
        let mut mean = vec![F::zero(); c_out];
        for ti in 0..t {
            let inv = F::one() / F::from_usize(ti + 1).unwrap();
            for c in 0..c_out {
                mean[c] = mean[c] + (z_pw.at(bi, ti)[c] - mean[c]) * inv;
            }
            se_mean.at_mut(bi, ti).copy_from_slice(&mean);
            let hid = se_hidden.at_mut(bi, ti);
            matvec(&block.se_reduce, &mean, h, c_out, hid);
            let relu_hid: Vec<F> = hid.iter().map(|v| v.max(F::zero())).collect();
            matvec(&block.se_expand, &relu_hid, c_out, h, &mut gate_pre);
            for c in 0..c_out {
                let g = sigmoid(gate_pre[c]);
                se_gate.at_mut(bi, ti)[c] = g;
                s_se.at_mut(bi, ti)[c] = z_pw.at(bi, ti)[c] * g;
            }
        }
    }

    // normalization
    let n = b * t;
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let eps = lit::<F>(BN_EPS);
    let (mut mean, mut var) = (vec![F::zero(); c_out], vec![F::zero(); c_out]);
    match mode {
        Mode::Train => {
            for bi in 0..b {
                for ti in 0..t {
                    for c in 0..c_out {
                        mean[c] = mean[c] + s_se.at(bi, ti)[c];
                    }
                }
            }
            for c in 0..c_out {
                mean[c] = mean[c] * inv_n;
            }
            for bi in 0..b {
                for ti in 0..t {
                    for c in 0..c_out {
                        let dev = s_se.at(bi, ti)[c] - mean[c];
                        var[c] = var[c] + dev * dev;
                    }
                }
            }
            for c in 0..c_out {
                var[c] = var[c] * inv_n;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(&block.running_mean);
            var.copy_from_slice(&block.running_var);
        }
    }

    let mut x_hat = Seq3::zeros(b, t, c_out);
    let mut preact = Seq3::zeros(b, t, c_out);
    let mut out = Seq3::zeros(b, t, c_out);
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..c_out {
                let xh = (s_se.at(bi, ti)[c] - mean[c]) / (var[c] + eps).sqrt();
                x_hat.at_mut(bi, ti)[c] = xh;
                let pre = block.norm_scale[c] * xh + block.norm_shift[c];
                preact.at_mut(bi, ti)[c] = pre;
                out.at_mut(bi, ti)[c] = pre.max(F::zero());
            }
        }
    }

    // skip connection
    match &block.skip {
        Some(proj) => {
            let mut sk = vec![F::zero(); c_out];
            for bi in 0..b {
                for ti in 0..t {
                    proj.forward(x.at(bi, ti), &mut sk);
                    for c in 0..c_out {
                        out.at_mut(bi, ti)[c] = out.at(bi, ti)[c] + sk[c];
                    }
                }
            }
        }
        None => {
            for bi in 0..b {
                for ti in 0..t {
                    for c in 0..c_out {
                        out.at_mut(bi, ti)[c] = out.at(bi, ti)[c] + x.at(bi, ti)[c];
                    }
                }
            }
        }
    }

    let new_running = (mode == Mode::Train).then(|| {
        let mom = lit::<F>(BN_MOMENTUM);
        let one_m = F::one() - mom;
        let rm: Vec<F> = block
            .running_mean
            .iter()
            .zip(&mean)
            .map(|(r, m)| *r * one_m + *m * mom)
            .collect();
        let rv: Vec<F> = block
            .running_var
            .iter()
            .zip(&var)
            .map(|(r, v)| *r * one_m + *v * mom)
            .collect();
        (rm, rv)
    });

    let cache = BlockCache {
        x_in: x,
        y_dw,
        z_pw,
        se_mean,
        se_hidden,
        se_gate,
        bn_mean: mean,
        bn_var: var,
        x_hat,
        preact,
        new_running,
    };
    (out, cache)
}

/// Reverse pass. Accumulates parameter gradients into `grads` (same
/// registry shape as the model) and returns the gradient with respect
/// to the frontend features.
pub fn encoder_backward<F: Real>(
    model: &ModelParams<F>,
    cache: &EncoderCache<F>,
    grad_out: &Seq3<F>,
    grads: &mut ModelParams<F>,
) -> Seq3<F> {
    let mut dx = grad_out.clone();
    for (i, (block, bc)) in model.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        dx = backward_block(block, bc, &dx, &mut grads.blocks[i]);
    }

    // input projection backward
    let feats = &cache.proj_in;
    let (b, t) = (feats.batch, feats.frames);
    let mut dfeat = Seq3::zeros(b, t, feats.channels);
    let gp = &mut grads.input_proj;
    for bi in 0..b {
        for ti in 0..t {
            let dy = dx.at(bi, ti);
            outer_accum(&mut gp.weight, dy, feats.at(bi, ti));
            for (gb, d) in gp.bias.iter_mut().zip(dy) {
                *gb = *gb + *d;
            }
            matvec_t_accum(
                &model.input_proj.weight,
                dy,
                model.input_proj.out_dim,
                feats.channels,
                dfeat.at_mut(bi, ti),
            );
        }
    }
    dfeat
}

fn backward_block<F: Real>(
    block: &ConvBlock<F>,
    bc: &BlockCache<F>,
    grad_out: &Seq3<F>,
    g: &mut ConvBlock<F>,
) -> Seq3<F> {
    let (b, t) = (grad_out.batch, grad_out.frames);
    let (c_in, c_out) = (block.c_in, block.c_out);
    let k = block.kernel;
    let d = block.dilation;
    let eps = lit::<F>(BN_EPS);

    let mut dx_in = Seq3::zeros(b, t, c_in);

    // skip path
    match &block.skip {
        Some(proj) => {
            let gs = g.skip.as_mut().expect("gradient registry matches model");
            for bi in 0..b {
                for ti in 0..t {
                    let dy = grad_out.at(bi, ti);
                    outer_accum(&mut gs.weight, dy, bc.x_in.at(bi, ti));
                    for (gb, dv) in gs.bias.iter_mut().zip(dy) {
                        *gb = *gb + *dv;
                    }
                    matvec_t_accum(&proj.weight, dy, c_out, c_in, dx_in.at_mut(bi, ti));
                }
            }
        }
        None => {
            for bi in 0..b {
                for ti in 0..t {
                    let dst = dx_in.at_mut(bi, ti);
                    for (dv, s) in dst.iter_mut().zip(grad_out.at(bi, ti)) {
                        *dv = *dv + *s;
                    }
                }
            }
        }
    }

    // relu
    let mut dpre = Seq3::zeros(b, t, c_out);
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..c_out {
                if bc.preact.at(bi, ti)[c] > F::zero() {
                    dpre.at_mut(bi, ti)[c] = grad_out.at(bi, ti)[c];
                }
            }
        }
    }

    // batch normalization (joint over all batch items and frames)
    let n = b * t;
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut sum_dxh = vec![F::zero(); c_out];
    let mut sum_dxh_xh = vec![F::zero(); c_out];
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..c_out {
                let dy = dpre.at(bi, ti)[c];
                let xh = bc.x_hat.at(bi, ti)[c];
                g.norm_scale[c] = g.norm_scale[c] + dy * xh;
                g.norm_shift[c] = g.norm_shift[c] + dy;
                let dxh = dy * block.norm_scale[c];
                sum_dxh[c] = sum_dxh[c] + dxh;
                sum_dxh_xh[c] = sum_dxh_xh[c] + dxh * xh;
            }
        }
    }
    let inv_std: Vec<F> = bc.bn_var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
    let mut ds = Seq3::zeros(b, t, c_out); // gradient w.r.t. SE output
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..c_out {
                let dxh = dpre.at(bi, ti)[c] * block.norm_scale[c];
                let xh = bc.x_hat.at(bi, ti)[c];
                ds.at_mut(bi, ti)[c] =
                    inv_std[c] * (dxh - inv_n * (sum_dxh[c] + xh * sum_dxh_xh[c]));
            }
        }
    }

    // squeeze-excitation
    let h = block.se_hidden;
    let mut dz = Seq3::zeros(b, t, c_out);
    let mut dgate = vec![F::zero(); c_out];
    let mut dhid = vec![F::zero(); h];
    let mut dmean = vec![F::zero(); c_out];
    for bi in 0..b {
        // gate path per frame, then the running-mean suffix accumulator
        let mut suffix = vec![F::zero(); c_out];
        let mut dmean_t: Vec<Vec<F>> = Vec::with_capacity(t);
        for ti in 0..t {
            let z = bc.z_pw.at(bi, ti);
            let gt = bc.se_gate.at(bi, ti);
            let dout = ds.at(bi, ti);
            // direct product path
            for c in 0..c_out {
                dz.at_mut(bi, ti)[c] = dout[c] * gt[c];
                // d gate_pre = dL/dg * sigmoid'
                dgate[c] = dout[c] * z[c] * gt[c] * (F::one() - gt[c]);
            }
            // expand matrix
            let relu_hid: Vec<F> = bc
                .se_hidden
                .at(bi, ti)
                .iter()
                .map(|v| v.max(F::zero()))
                .collect();
            outer_accum(&mut g.se_expand, &dgate, &relu_hid);
            dhid.iter_mut().for_each(|v| *v = F::zero());
            matvec_t_accum(&block.se_expand, &dgate, c_out, h, &mut dhid);
            for (dv, a) in dhid.iter_mut().zip(bc.se_hidden.at(bi, ti)) {
                if !(*a > F::zero()) {
                    *dv = F::zero();
                }
            }
            outer_accum(&mut g.se_reduce, &dhid, bc.se_mean.at(bi, ti));
            dmean.iter_mut().for_each(|v| *v = F::zero());
            matvec_t_accum(&block.se_reduce, &dhid, h, c_out, &mut dmean);
            dmean_t.push(dmean.clone());
        }
        // m_t = (1/(t+1)) * sum_{u<=t} z_u  =>  dz_u += sum_{t>=u} dm_t/(t+1)
        for ti in (0..t).rev() {
            let inv = F::one() / F::from_usize(ti + 1).unwrap();
            for c in 0..c_out {
                suffix[c] = suffix[c] + dmean_t[ti][c] * inv;
                dz.at_mut(bi, ti)[c] = dz.at_mut(bi, ti)[c] + suffix[c];
            }
        }
    }

    // pointwise
    let mut dy = Seq3::zeros(b, t, c_in);
    for bi in 0..b {
        for ti in 0..t {
            let dzv = dz.at(bi, ti);
            outer_accum(&mut g.pw.weight, dzv, bc.y_dw.at(bi, ti));
            for (gb, dv) in g.pw.bias.iter_mut().zip(dzv) {
                *gb = *gb + *dv;
            }
            matvec_t_accum(&block.pw.weight, dzv, c_out, c_in, dy.at_mut(bi, ti));
        }
    }

    // depthwise
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..c_in {
                let dv = dy.at(bi, ti)[c];
                g.dw_bias[c] = g.dw_bias[c] + dv;
                for j in 0..k {
                    let lag = dw_tap_lag(k, d, j);
                    if lag <= ti {
                        g.dw_weight[c * k + j] =
                            g.dw_weight[c * k + j] + dv * bc.x_in.at(bi, ti - lag)[c];
                        dx_in.at_mut(bi, ti - lag)[c] =
                            dx_in.at(bi, ti - lag)[c] + dv * block.dw_weight[c * k + j];
                    }
                }
            }
        }
    }

    dx_in
}

/// Applies the running-statistics updates recorded during a training
/// forward pass.
pub fn apply_running_stats<F: Real>(model: &mut ModelParams<F>, cache: &EncoderCache<F>) {
    for (block, bc) in model.blocks.iter_mut().zip(&cache.blocks) {
        if let Some((rm, rv)) = &bc.new_running {
            block.running_mean.copy_from_slice(rm);
            block.running_var.copy_from_slice(rv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrontendWeights, ModelConfig};

    fn toy_model(seed: u64) -> ModelParams<f32> {
        ModelParams::init(&ModelConfig::toy(vec!["a".into(), "b".into(), "c".into()]), seed).unwrap()
    }

    fn random_features(model: &ModelParams<f32>, b: usize, t: usize, seed: u64) -> Seq3<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = model.config.n_bins;
        Seq3::from_data(
            (0..b * t * n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            b,
            t,
            n,
        )
    }

    #[test]
    fn identity_depthwise_kernel_passes_input_through() {
        // tap k-1 = 1, all other taps 0, zero bias -> depthwise is the
        // identity; verified through the streaming path with the rest of
        // the block neutralized (SE expand 0 -> gates 1/2 ... so instead
        // check the depthwise output via a single-block probe)
        let mut model = toy_model(1);
        let block = &mut model.blocks[0];
        block.dw_weight.iter_mut().for_each(|v| *v = 0.0);
        let k = block.kernel;
        for c in 0..block.c_in {
            block.dw_weight[c * k + (k - 1)] = 1.0;
        }
        block.dw_bias.iter_mut().for_each(|v| *v = 0.0);

        let x = Seq3::from_data(
            (0..2 * 7 * block.c_in).map(|i| (i as f32 * 0.37).sin()).collect(),
            2,
            7,
            block.c_in,
        );
        let (_, cache) = forward_block(&model.blocks[0], x.clone(), Mode::Eval);
        assert_eq!(cache.y_dw.data, x.data);
    }

    #[test]
    fn impulse_response_reads_taps_in_reverse_time() {
        // unit impulse at frame 3 of channel 0: y[t] = g[k-1-(t-3)/d] at
        // the dilated lags, matching a direct convolution-sum oracle
        let mut model = toy_model(2);
        let block = &mut model.blocks[1]; // dilation 2
        block.dw_bias.iter_mut().for_each(|v| *v = 0.0);
        let (k, d) = (block.kernel, block.dilation);
        let c_in = block.c_in;
        let t = 16;
        let mut x = Seq3::zeros(1, t, c_in);
        x.at_mut(0, 3)[0] = 1.0;
        let (_, cache) = forward_block(&model.blocks[1], x.clone(), Mode::Eval);
        // oracle: y[t,0] = sum_j g[0,j] * x[t - (k-1-j)d, 0]
        for ti in 0..t {
            let mut want = 0.0f32;
            for j in 0..k {
                let lag = (k - 1 - j) * d;
                if lag <= ti && ti - lag == 3 {
                    want += model.blocks[1].dw_weight[j];
                }
            }
            assert!(
                (cache.y_dw.at(0, ti)[0] - want).abs() < 1e-6,
                "t={ti}: {} vs {want}",
                cache.y_dw.at(0, ti)[0]
            );
        }
    }

    #[test]
    fn se_gates_are_half_when_expand_is_zero() {
        let mut model = toy_model(3);
        for block in &mut model.blocks {
            block.se_expand.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_features(&model, 1, 5, 30);
        let (_, cache) = encoder_forward_batch(&model, &x, Mode::Eval);
        for bc in &cache.blocks {
            assert!(bc.se_gate.data.iter().all(|&g| g == 0.5));
        }
    }

    #[test]
    fn se_gates_constant_for_constant_input() {
        // With an identity depthwise tap the conv output is constant
        // whenever the input is, so the SE running mean — and therefore
        // the gates — are constant from the first frame.
        let mut model = toy_model(4);
        {
            let block = &mut model.blocks[0];
            block.dw_weight.iter_mut().for_each(|v| *v = 0.0);
            let k = block.kernel;
            for c in 0..block.c_in {
                block.dw_weight[c * k + (k - 1)] = 1.0;
            }
            block.dw_bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let c_in = model.blocks[0].c_in;
        let row: Vec<f32> = (0..c_in).map(|c| (c as f32 * 0.21).cos()).collect();
        let mut x = Seq3::zeros(1, 9, c_in);
        for ti in 0..9 {
            x.at_mut(0, ti).copy_from_slice(&row);
        }
        let (_, cache) = forward_block(&model.blocks[0], x, Mode::Eval);
        for ti in 1..9 {
            for c in 0..model.blocks[0].c_out {
                assert!(
                    (cache.se_gate.at(0, ti)[c] - cache.se_gate.at(0, 0)[c]).abs() < 1e-6,
                    "t={ti} c={c}"
                );
            }
        }
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_output() {
        let mut model = toy_model(5);
        // zero all biases and shifts so the only optional constants vanish
        model.input_proj.bias.iter_mut().for_each(|v| *v = 0.0);
        for block in &mut model.blocks {
            block.dw_bias.iter_mut().for_each(|v| *v = 0.0);
            block.pw.bias.iter_mut().for_each(|v| *v = 0.0);
            block.norm_shift.iter_mut().for_each(|v| *v = 0.0);
            if let Some(skip) = &mut block.skip {
                skip.bias.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Seq3::zeros(1, 6, model.config.n_bins);
        let (y, _) = encoder_forward_batch(&model, &x, Mode::Eval);
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn streaming_equals_batch_eval() {
        let model = toy_model(6);
        let t = 40;
        let x = random_features(&model, 1, t, 60);
        let (offline, _) = encoder_forward_batch(&model, &x, Mode::Eval);

        let mut state = EncoderState::fresh(&model);
        let mut scratch = EncoderScratch::new(&model);
        let c_out = model.blocks.last().unwrap().c_out;
        let mut frame = vec![0.0f32; c_out];
        for ti in 0..t {
            encoder_step(&model, &mut state, x.at(0, ti), &mut frame, &mut scratch);
            for c in 0..c_out {
                assert!(
                    (frame[c] - offline.at(0, ti)[c]).abs() < 1e-5,
                    "t={ti} c={c}: {} vs {}",
                    frame[c],
                    offline.at(0, ti)[c]
                );
            }
        }
    }

    #[test]
    fn chunked_carry_equals_one_shot() {
        // 13 + 27 frames with carried state equals one pass over 40
        let model = toy_model(7);
        let t = 40;
        let x = random_features(&model, 1, t, 70);
        let c_out = model.blocks.last().unwrap().c_out;

        let run = |splits: &[usize]| {
            let mut state = EncoderState::fresh(&model);
            let mut scratch = EncoderScratch::new(&model);
            let mut out = Vec::new();
            let mut ti = 0;
            for &len in splits {
                for _ in 0..len {
                    let mut frame = vec![0.0f32; c_out];
                    encoder_step(&model, &mut state, x.at(0, ti), &mut frame, &mut scratch);
                    out.extend_from_slice(&frame);
                    ti += 1;
                }
            }
            out
        };
        let one = run(&[40]);
        let two = run(&[13, 27]);
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn causality_future_frames_do_not_leak() {
        let model = toy_model(8);
        let t = 25;
        let x = random_features(&model, 1, t, 80);
        let (base, _) = encoder_forward_batch(&model, &x, Mode::Eval);
        // perturb frame 10; frames 0..10 must not change at all
        let mut x2 = x.clone();
        for v in x2.at_mut(0, 10) {
            *v += 3.0;
        }
        let (pert, _) = encoder_forward_batch(&model, &x2, Mode::Eval);
        for ti in 0..10 {
            for c in 0..base.channels {
                assert_eq!(base.at(0, ti)[c], pert.at(0, ti)[c], "t={ti}");
            }
        }
        // and the perturbation does reach later frames
        let changed = (10..t).any(|ti| {
            (0..base.channels).any(|c| base.at(0, ti)[c] != pert.at(0, ti)[c])
        });
        assert!(changed);
    }

    #[test]
    fn depthwise_pointwise_factorization_matches_full_conv() {
        // against a dense causal conv whose kernel tensor is the product
        // of the factored kernels: K[o,i,j] = pw[o,i] * dw[i,j]
        let model = toy_model(9);
        let block = &model.blocks[0];
        let (k, d, c_in, c_out) = (block.kernel, block.dilation, block.c_in, block.c_out);
        let t = 12;
        let x = Seq3::from_data(
            (0..t * c_in).map(|i| ((i * 7 % 13) as f32 - 6.0) * 0.1).collect(),
            1,
            t,
            c_in,
        );
        let (_, cache) = forward_block(block, x.clone(), Mode::Eval);
        // full conv oracle, then compare against pw(dw(x))
        for ti in 0..t {
            for o in 0..c_out {
                let mut want = block.pw.bias[o];
                for i in 0..c_in {
                    // bias of dw folds through pw
                    let mut yi = block.dw_bias[i];
                    for j in 0..k {
                        let lag = (k - 1 - j) * d;
                        if lag <= ti {
                            yi += block.dw_weight[i * k + j] * x.at(0, ti - lag)[i];
                        }
                    }
                    want += block.pw.weight[o * c_in + i] * yi;
                }
                let got = cache.z_pw.at(0, ti)[o];
                assert!((got - want).abs() < 1e-5, "t={ti} o={o}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn train_mode_records_running_stat_updates() {
        let model = toy_model(10);
        let x = random_features(&model, 2, 8, 100);
        let (_, cache) = encoder_forward_batch(&model, &x, Mode::Train);
        for (bc, block) in cache.blocks.iter().zip(&model.blocks) {
            let (rm, rv) = bc.new_running.as_ref().expect("train mode updates stats");
            // momentum 0.1 from (0, 1) init: new = 0.9*old + 0.1*batch
            for c in 0..block.c_out {
                let want_m = 0.9 * block.running_mean[c] + 0.1 * bc.bn_mean[c];
                let want_v = 0.9 * block.running_var[c] + 0.1 * bc.bn_var[c];
                assert!((rm[c] - want_m).abs() < 1e-6);
                assert!((rv[c] - want_v).abs() < 1e-6);
            }
        }
    }

    /// Finite-difference check of the whole encoder in f64: scalar loss
    /// L = sum(out * coeff), gradients for a sample of parameters.
    #[test]
    fn backward_matches_finite_differences() {
        use crate::model::convert;
        let cfg = ModelConfig::tiny(2);
        let model32 = ModelParams::<f32>::init(&cfg, 11).unwrap();
        let model: ModelParams<f64> = convert(&model32);
        let (b, t, n) = (2, 6, cfg.n_bins);
        let x = Seq3::from_data(
            (0..b * t * n).map(|i| ((i * 31 % 17) as f64 - 8.0) * 0.1).collect(),
            b,
            t,
            n,
        );
        let coeff = |i: usize| ((i as f64) * 0.611).cos();
        let loss = |m: &ModelParams<f64>| {
            let (y, _) = encoder_forward_batch(m, &x, Mode::Train);
            y.data.iter().enumerate().map(|(i, v)| coeff(i) * v).sum::<f64>()
        };

        // analytic
        let (y, cache) = encoder_forward_batch(&model, &x, Mode::Train);
        let dy = Seq3::from_data(
            (0..y.data.len()).map(coeff).collect(),
            y.batch,
            y.frames,
            y.channels,
        );
        let mut grads = model.zeros_like();
        let dfeat = encoder_backward(&model, &cache, &dy, &mut grads);

        // parameter gradients: check a deterministic sample across all
        // encoder tensors (frontend has no role here)
        let flat = model.flatten_trainable();
        let infos = model.tensor_infos();
        let gflat = grads.flatten_trainable();
        let mut off = 0;
        for info in &infos {
            if !info.trainable {
                continue;
            }
            if info.path.starts_with("frontend") {
                off += info.len;
                continue;
            }
            for probe in [0, info.len / 2, info.len - 1] {
                let idx = off + probe;
                let h = 1e-5 * flat[idx].abs().max(1.0);
                let mut m2 = model.clone();
                let mut fp = flat.clone();
                fp[idx] += h;
                m2.unflatten_trainable(&fp).unwrap();
                let lp = loss(&m2);
                fp[idx] -= 2.0 * h;
                m2.unflatten_trainable(&fp).unwrap();
                let lm = loss(&m2);
                let fd = (lp - lm) / (2.0 * h);
                let an = gflat[idx];
                assert!(
                    (an - fd).abs() <= 1e-5 * fd.abs().max(1e-4),
                    "{} [{probe}]: {an} vs {fd}",
                    info.path
                );
            }
            off += info.len;
        }

        // input gradient
        for probe in [0usize, 13, x.data.len() - 1] {
            let h = 1e-5;
            let mut xp = x.clone();
            xp.data[probe] += h;
            let (yp, _) = encoder_forward_batch(&model, &xp, Mode::Train);
            let lp: f64 = yp.data.iter().enumerate().map(|(i, v)| coeff(i) * v).sum();
            xp.data[probe] -= 2.0 * h;
            let (ym, _) = encoder_forward_batch(&model, &xp, Mode::Train);
            let lm: f64 = ym.data.iter().enumerate().map(|(i, v)| coeff(i) * v).sum();
            let fd = (lp - lm) / (2.0 * h);
            let an = dfeat.data[probe];
            assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1e-4), "feat[{probe}]: {an} vs {fd}");
        }
        let _ = FrontendWeights::Fixed::<f64>;
    }
}
