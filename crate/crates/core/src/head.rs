//! Temporal head: unidirectional GRU, streaming softmax attention over
//! time, and the species classifier.
//!
//! The attention aggregate is kept as an online-softmax accumulator
//! (running max, numerator, denominator) so memory stays O(H) no matter
//! how long the stream runs; a snapshot can be finalized at any chunk
//! boundary without disturbing the stream.

use crate::error::{Error, Result};
use crate::model::{GruParams, ModelParams};
use crate::num::{matvec, matvec_t_accum, outer_accum, sigmoid, softmax_in_place, Real};

/// One GRU step: `h_t = (1 - z) * h_prev + z * candidate`, so a zero
/// update gate carries the previous state through unchanged.
pub fn gru_step<F: Real>(p: &GruParams<F>, x: &[F], h_prev: &[F], h_out: &mut [F]) -> Result<()> {
    if x.len() != p.in_dim || h_prev.len() != p.hidden || h_out.len() != p.hidden {
        return Err(Error::shape(format!(
            "gru dims: x {} (want {}), h {} (want {})",
            x.len(),
            p.in_dim,
            h_prev.len(),
            p.hidden
        )));
    }
    let h = p.hidden;
    let mut az = vec![F::zero(); h];
    let mut ar = vec![F::zero(); h];
    let mut ai = vec![F::zero(); h];
    let mut an = vec![F::zero(); h];
    gru_gates(p, x, h_prev, &mut az, &mut ar, &mut ai, &mut an);
    for i in 0..h {
        let z = sigmoid(az[i]);
        let r = sigmoid(ar[i]);
        let cand = (ai[i] + r * an[i]).tanh();
        h_out[i] = (F::one() - z) * h_prev[i] + z * cand;
    }
    Ok(())
}

/// Gate pre-activations: az/ar complete, ai = W_in x + b_in and
/// an = W_hn h + b_hn kept separate for the candidate's gated form.
fn gru_gates<F: Real>(
    p: &GruParams<F>,
    x: &[F],
    h_prev: &[F],
    az: &mut [F],
    ar: &mut [F],
    ai: &mut [F],
    an: &mut [F],
) {
    let h = p.hidden;
    let mut tmp = vec![F::zero(); h];
    matvec(&p.w_iz, x, h, p.in_dim, az);
    matvec(&p.w_hz, h_prev, h, h, &mut tmp);
    for i in 0..h {
        az[i] = az[i] + tmp[i] + p.b_iz[i] + p.b_hz[i];
    }
    matvec(&p.w_ir, x, h, p.in_dim, ar);
    matvec(&p.w_hr, h_prev, h, h, &mut tmp);
    for i in 0..h {
        ar[i] = ar[i] + tmp[i] + p.b_ir[i] + p.b_hr[i];
    }
    matvec(&p.w_in, x, h, p.in_dim, ai);
    for i in 0..h {
        ai[i] = ai[i] + p.b_in[i];
    }
    matvec(&p.w_hn, h_prev, h, h, an);
    for i in 0..h {
        an[i] = an[i] + p.b_hn[i];
    }
}

/// Streaming softmax accumulator over attention scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnAccumulator<F> {
    /// Running maximum score (starts at -inf).
    pub max_score: F,
    /// Running denominator sum(exp(s - max)).
    pub denom: F,
    /// Running numerator sum(exp(s - max) * h), length H.
    pub numer: Vec<F>,
    /// Frames absorbed so far.
    pub count: u64,
}

impl<F: Real> AttnAccumulator<F> {
    pub fn new(hidden: usize) -> Self {
        AttnAccumulator {
            max_score: F::neg_infinity(),
            denom: F::zero(),
            numer: vec![F::zero(); hidden],
            count: 0,
        }
    }

    /// Absorbs one frame's score and hidden state, rescaling the sums
    /// if a new maximum arrives.
    pub fn push(&mut self, score: F, h: &[F]) {
        debug_assert_eq!(h.len(), self.numer.len());
        self.count += 1;
        if score > self.max_score {
            let scale = if self.max_score == F::neg_infinity() {
                F::zero()
            } else {
                (self.max_score - score).exp()
            };
            self.denom = self.denom * scale + F::one();
            for (n, v) in self.numer.iter_mut().zip(h) {
                *n = *n * scale + *v;
            }
            self.max_score = score;
        } else {
            let e = (score - self.max_score).exp();
            self.denom = self.denom + e;
            for (n, v) in self.numer.iter_mut().zip(h) {
                *n = *n + e * *v;
            }
        }
    }

    /// Softmax-weighted context. Non-mutating, so it can be called at
    /// any chunk boundary as a running snapshot.
    pub fn context(&self) -> Result<Vec<F>> {
        if self.count == 0 {
            return Err(Error::domain("attention over an empty stream"));
        }
        Ok(self.numer.iter().map(|n| *n / self.denom).collect())
    }
}

/// Attention score for one hidden state: `v . h + bias`.
pub fn attn_score<F: Real>(model: &ModelParams<F>, h: &[F]) -> F {
    let mut s = model.attn_bias[0];
    for (v, x) in model.attn_score.iter().zip(h) {
        s = s + *v * *x;
    }
    s
}

/// Class probabilities from a finalized context vector.
pub fn classify<F: Real>(model: &ModelParams<F>, context: &[F]) -> Vec<F> {
    let mut logits = vec![F::zero(); model.classifier.out_dim];
    model.classifier.forward(context, &mut logits);
    softmax_in_place(&mut logits);
    logits
}

/// Logits (pre-softmax) from a context vector.
pub fn class_logits<F: Real>(model: &ModelParams<F>, context: &[F]) -> Vec<F> {
    let mut logits = vec![F::zero(); model.classifier.out_dim];
    model.classifier.forward(context, &mut logits);
    logits
}

/// Training-time forward over one clip's encoder frames. Caches every
/// per-step intermediate for backpropagation through time.
#[derive(Debug, Clone)]
pub struct HeadCache<F> {
    /// Per frame: h_prev, z, r, candidate, an (= W_hn h_prev + b_hn).
    pub h_prev: Vec<Vec<F>>,
    pub z: Vec<Vec<F>>,
    pub r: Vec<Vec<F>>,
    pub cand: Vec<Vec<F>>,
    pub an: Vec<Vec<F>>,
    /// Hidden states h_t (t = 0..T).
    pub hs: Vec<Vec<F>>,
    /// Softmax attention weights over frames.
    pub alpha: Vec<F>,
    pub context: Vec<F>,
    pub logits: Vec<F>,
}

/// Offline head forward for one clip: GRU unroll, softmax attention,
/// classifier logits.
pub fn head_forward<F: Real>(model: &ModelParams<F>, frames: &[Vec<F>]) -> HeadCache<F> {
    let p = &model.gru;
    let hdim = p.hidden;
    let t_len = frames.len();
    let mut cache = HeadCache {
        h_prev: Vec::with_capacity(t_len),
        z: Vec::with_capacity(t_len),
        r: Vec::with_capacity(t_len),
        cand: Vec::with_capacity(t_len),
        an: Vec::with_capacity(t_len),
        hs: Vec::with_capacity(t_len),
        alpha: Vec::with_capacity(t_len),
        context: vec![F::zero(); hdim],
        logits: Vec::new(),
    };
    let mut h = vec![F::zero(); hdim];
    let mut az = vec![F::zero(); hdim];
    let mut ar = vec![F::zero(); hdim];
    let mut ai = vec![F::zero(); hdim];
    let mut an = vec![F::zero(); hdim];
    let mut scores = Vec::with_capacity(t_len);
    for x in frames {
        gru_gates(p, x, &h, &mut az, &mut ar, &mut ai, &mut an);
        let mut z = vec![F::zero(); hdim];
        let mut r = vec![F::zero(); hdim];
        let mut cand = vec![F::zero(); hdim];
        let mut h_new = vec![F::zero(); hdim];
        for i in 0..hdim {
            z[i] = sigmoid(az[i]);
            r[i] = sigmoid(ar[i]);
            cand[i] = (ai[i] + r[i] * an[i]).tanh();
            h_new[i] = (F::one() - z[i]) * h[i] + z[i] * cand[i];
        }
        cache.h_prev.push(h.clone());
        cache.z.push(z);
        cache.r.push(r);
        cache.cand.push(cand);
        cache.an.push(an.clone());
        scores.push(attn_score(model, &h_new));
        cache.hs.push(h_new.clone());
        h = h_new;
    }
    let mut alpha = scores;
    softmax_in_place(&mut alpha);
    for (a, hv) in alpha.iter().zip(&cache.hs) {
        for i in 0..hdim {
            cache.context[i] = cache.context[i] + *a * hv[i];
        }
    }
    cache.alpha = alpha;
    cache.logits = class_logits(model, &cache.context);
    cache
}

/// Backpropagation through the head for one clip. `grad_logits` is
/// dL/dlogits; parameter gradients accumulate into `grads`; returns
/// dL/dx_t for every encoder frame.
pub fn head_backward<F: Real>(
    model: &ModelParams<F>,
    frames: &[Vec<F>],
    cache: &HeadCache<F>,
    grad_logits: &[F],
    grads: &mut ModelParams<F>,
) -> Vec<Vec<F>> {
    let p = &model.gru;
    let hdim = p.hidden;
    let t_len = frames.len();

    // classifier
    let mut dctx = vec![F::zero(); hdim];
    outer_accum(&mut grads.classifier.weight, grad_logits, &cache.context);
    for (gb, d) in grads.classifier.bias.iter_mut().zip(grad_logits) {
        *gb = *gb + *d;
    }
    matvec_t_accum(
        &model.classifier.weight,
        grad_logits,
        model.classifier.out_dim,
        hdim,
        &mut dctx,
    );

    // attention: context = sum alpha_t h_t, alpha = softmax(v.h + b)
    let mut dh: Vec<Vec<F>> = vec![vec![F::zero(); hdim]; t_len];
    let mut dalpha = vec![F::zero(); t_len];
    for t in 0..t_len {
        let hv = &cache.hs[t];
        let a = cache.alpha[t];
        let mut acc = F::zero();
        for i in 0..hdim {
            dh[t][i] = dh[t][i] + a * dctx[i];
            acc = acc + dctx[i] * hv[i];
        }
        dalpha[t] = acc;
    }
    // softmax backward
    let mut dot = F::zero();
    for t in 0..t_len {
        dot = dot + dalpha[t] * cache.alpha[t];
    }
    for t in 0..t_len {
        let dscore = cache.alpha[t] * (dalpha[t] - dot);
        grads.attn_bias[0] = grads.attn_bias[0] + dscore;
        for i in 0..hdim {
            grads.attn_score[i] = grads.attn_score[i] + dscore * cache.hs[t][i];
            dh[t][i] = dh[t][i] + dscore * model.attn_score[i];
        }
    }

    // GRU backward through time
    let mut dx = vec![vec![F::zero(); p.in_dim]; t_len];
    let mut carry = vec![F::zero(); hdim]; // dL/dh_t flowing from t+1
    let mut daz = vec![F::zero(); hdim];
    let mut dar = vec![F::zero(); hdim];
    let mut dai = vec![F::zero(); hdim];
    let mut dan = vec![F::zero(); hdim];
    for t in (0..t_len).rev() {
        let z = &cache.z[t];
        let r = &cache.r[t];
        let cand = &cache.cand[t];
        let an = &cache.an[t];
        let h_prev = &cache.h_prev[t];
        let mut dh_prev = vec![F::zero(); hdim];
        for i in 0..hdim {
            let d = dh[t][i] + carry[i];
            let dz = d * (cand[i] - h_prev[i]);
            let dcand = d * z[i];
            dh_prev[i] = d * (F::one() - z[i]);
            let da = dcand * (F::one() - cand[i] * cand[i]);
            let dr = da * an[i];
            dai[i] = da;
            dan[i] = da * r[i];
            daz[i] = dz * z[i] * (F::one() - z[i]);
            dar[i] = dr * r[i] * (F::one() - r[i]);
        }
        let g = &mut grads.gru;
        outer_accum(&mut g.w_iz, &daz, &frames[t]);
        outer_accum(&mut g.w_ir, &dar, &frames[t]);
        outer_accum(&mut g.w_in, &dai, &frames[t]);
        outer_accum(&mut g.w_hz, &daz, h_prev);
        outer_accum(&mut g.w_hr, &dar, h_prev);
        outer_accum(&mut g.w_hn, &dan, h_prev);
        for i in 0..hdim {
            g.b_iz[i] = g.b_iz[i] + daz[i];
            g.b_hz[i] = g.b_hz[i] + daz[i];
            g.b_ir[i] = g.b_ir[i] + dar[i];
            g.b_hr[i] = g.b_hr[i] + dar[i];
            g.b_in[i] = g.b_in[i] + dai[i];
            g.b_hn[i] = g.b_hn[i] + dan[i];
        }
        matvec_t_accum(&p.w_iz, &daz, hdim, p.in_dim, &mut dx[t]);
        matvec_t_accum(&p.w_ir, &dar, hdim, p.in_dim, &mut dx[t]);
        matvec_t_accum(&p.w_in, &dai, hdim, p.in_dim, &mut dx[t]);
        matvec_t_accum(&p.w_hz, &daz, hdim, hdim, &mut dh_prev);
        matvec_t_accum(&p.w_hr, &dar, hdim, hdim, &mut dh_prev);
        matvec_t_accum(&p.w_hn, &dan, hdim, hdim, &mut dh_prev);
        carry = dh_prev;
    }
    dx
}
