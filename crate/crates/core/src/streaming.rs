//! Fixed-memory chunked inference.
//!
//! A [`StreamState`] carries everything the pipeline needs between
//! chunks: the partial sample window, per-block conv left context, SE
//! pooling accumulators, the GRU hidden state, and the attention
//! accumulator. Its size depends only on the model configuration, so a
//! 3-hour stream costs exactly the same memory as a 3-second one, and a
//! serialized state can be suspended and resumed across power cycles.

use crate::bytes::{put_f64, put_scalar, put_slice, put_u32, put_u64, Reader};
use crate::encoder::{
    encoder_forward_batch, encoder_step, EncoderScratch, EncoderState, Mode, Seq3,
};
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::head::{attn_score, class_logits, classify, gru_step, head_forward, AttnAccumulator};
use crate::model::ModelParams;
use crate::num::Real;

const STATE_MAGIC: &[u8; 4] = b"WSTS";
const STATE_VERSION: u32 = 1;

/// Complete between-chunk carry for one audio stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState<F> {
    /// Partial window: up to `n_fft` samples awaiting the next frame.
    buffer: Vec<F>,
    fill: usize,
    frames_emitted: u64,
    total_samples: u64,
    /// Set once finalize has zero-padded a short stream.
    padded: bool,
    encoder: EncoderState<F>,
    gru_h: Vec<F>,
    attn: AttnAccumulator<F>,
}

impl<F: Real> StreamState<F> {
    fn fresh(model: &ModelParams<F>) -> Self {
        StreamState {
            buffer: vec![F::zero(); model.config.n_fft],
            fill: 0,
            frames_emitted: 0,
            total_samples: 0,
            padded: false,
            encoder: EncoderState::fresh(model),
            gru_h: vec![F::zero(); model.config.hidden],
            attn: AttnAccumulator::new(model.config.hidden),
        }
    }

    pub fn frames_emitted(&self) -> u64 {
        self.frames_emitted
    }

    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    /// In-memory footprint of the carried values.
    pub fn byte_size(&self) -> usize {
        let scalars = self.buffer.len()
            + self
                .encoder
                .blocks
                .iter()
                .map(|b| b.carry.len() + b.se_mean.len())
                .sum::<usize>()
            + self.gru_h.len()
            + self.attn.numer.len()
            + 2; // attention max + denom
        scalars * std::mem::size_of::<F>() + 4 * 8 // counters
    }

    /// Serializes to the versioned little-endian snapshot format.
    ///
    /// Layout (all little-endian, scalars as f64):
    /// magic "WSTS", version u32, n_fft u32, n_blocks u32, hidden u32,
    /// total_samples u64, frames_emitted u64, padded u32, fill u32,
    /// buffer[n_fft], per block (carry_len u32, carry, se_count u64,
    /// c_out u32, se_mean), gru_h, attn max/denom, numer, count u64.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        put_u32(&mut out, STATE_VERSION);
        put_u32(&mut out, self.buffer.len() as u32);
        put_u32(&mut out, self.encoder.blocks.len() as u32);
        put_u32(&mut out, self.gru_h.len() as u32);
        put_u64(&mut out, self.total_samples);
        put_u64(&mut out, self.frames_emitted);
        put_u32(&mut out, self.padded as u32);
        put_u32(&mut out, self.fill as u32);
        put_slice(&mut out, &self.buffer);
        for b in &self.encoder.blocks {
            put_u32(&mut out, b.carry.len() as u32);
            put_slice(&mut out, &b.carry);
            put_u64(&mut out, b.se_count);
            put_u32(&mut out, b.se_mean.len() as u32);
            put_slice(&mut out, &b.se_mean);
        }
        put_slice(&mut out, &self.gru_h);
        put_f64(&mut out, self.attn.max_score.to_f64().unwrap());
        put_scalar(&mut out, self.attn.denom);
        put_slice(&mut out, &self.attn.numer);
        put_u64(&mut out, self.attn.count);
        out
    }

    /// Restores a snapshot, validating it against the model's topology.
    pub fn deserialize(bytes: &[u8], model: &ModelParams<F>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != STATE_MAGIC {
            return Err(Error::data("not a stream-state snapshot".to_string()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: STATE_VERSION,
            });
        }
        let mut state = Self::fresh(model);
        let n_fft = r.u32()? as usize;
        if n_fft != state.buffer.len() {
            return Err(Error::config(format!(
                "snapshot window {n_fft} does not match model n_fft {}",
                state.buffer.len()
            )));
        }
        let n_blocks = r.u32()? as usize;
        if n_blocks != state.encoder.blocks.len() {
            return Err(Error::config("snapshot block count mismatch".to_string()));
        }
        let hidden = r.u32()? as usize;
        if hidden != state.gru_h.len() {
            return Err(Error::config("snapshot hidden size mismatch".to_string()));
        }
        state.total_samples = r.u64()?;
        state.frames_emitted = r.u64()?;
        state.padded = r.u32()? != 0;
        state.fill = r.u32()? as usize;
        if state.fill > n_fft {
            return Err(Error::data("snapshot fill exceeds window".to_string()));
        }
        r.scalars_into(&mut state.buffer)?;
        for b in state.encoder.blocks.iter_mut() {
            let clen = r.u32()? as usize;
            if clen != b.carry.len() {
                return Err(Error::config("snapshot conv carry mismatch".to_string()));
            }
            r.scalars_into(&mut b.carry)?;
            b.se_count = r.u64()?;
            let mlen = r.u32()? as usize;
            if mlen != b.se_mean.len() {
                return Err(Error::config("snapshot SE width mismatch".to_string()));
            }
            r.scalars_into(&mut b.se_mean)?;
        }
        r.scalars_into(&mut state.gru_h)?;
        state.attn.max_score = crate::num::lit(r.f64()?);
        state.attn.denom = r.scalar()?;
        r.scalars_into(&mut state.attn.numer)?;
        state.attn.count = r.u64()?;
        Ok(state)
    }
}

/// A running prediction or final classification.
#[derive(Debug, Clone)]
pub struct Prediction<F> {
    pub probs: Vec<F>,
    pub class_index: usize,
    pub class_name: String,
}

/// Inference engine: immutable model plus reusable scratch. One runtime
/// can serve many streams; each stream owns its own [`StreamState`].
pub struct StreamRuntime<F: Real> {
    model: ModelParams<F>,
    frontend: Frontend<F>,
    scratch: EncoderScratch<F>,
    feat: Vec<F>,
    enc_out: Vec<F>,
    h_next: Vec<F>,
}

impl<F: Real> StreamRuntime<F> {
    pub fn new(model: ModelParams<F>) -> Result<Self> {
        let bank = model.materialize_bank()?;
        let frontend = Frontend::new(bank, model.config.n_fft, model.config.hop)?;
        let scratch = EncoderScratch::new(&model);
        let c_out = model.blocks.last().unwrap().c_out;
        Ok(StreamRuntime {
            feat: vec![F::zero(); model.config.n_bins],
            enc_out: vec![F::zero(); c_out],
            h_next: vec![F::zero(); model.config.hidden],
            frontend,
            scratch,
            model,
        })
    }

    pub fn model(&self) -> &ModelParams<F> {
        &self.model
    }

    /// Opens a stream, checking the declared sample rate up front.
    pub fn open_stream(&self, sample_rate: u32) -> Result<StreamState<F>> {
        if sample_rate != self.model.config.sample_rate {
            return Err(Error::config(format!(
                "stream sample rate {sample_rate} does not match model rate {}",
                self.model.config.sample_rate
            )));
        }
        Ok(StreamState::fresh(&self.model))
    }

    fn class_name(&self, idx: usize) -> String {
        self.model
            .config
            .species
            .get(idx)
            .cloned()
            .unwrap_or_else(|| "no_bird".to_string())
    }

    fn emit_frame(&mut self, state: &mut StreamState<F>) -> Result<()> {
        let n_fft = self.model.config.n_fft;
        let hop = self.model.config.hop;
        debug_assert_eq!(state.fill, n_fft);
        self.frontend
            .forward_frame(&state.buffer[..n_fft], &mut self.feat)?;
        encoder_step(
            &self.model,
            &mut state.encoder,
            &self.feat,
            &mut self.enc_out,
            &mut self.scratch,
        );
        gru_step(&self.model.gru, &self.enc_out, &state.gru_h, &mut self.h_next)?;
        std::mem::swap(&mut state.gru_h, &mut self.h_next);
        let score = attn_score(&self.model, &state.gru_h);
        state.attn.push(score, &state.gru_h);
        state.frames_emitted += 1;
        // retain the window overlap (n_fft - hop samples)
        state.buffer.copy_within(hop.., 0);
        state.fill = n_fft - hop;
        for v in &mut state.buffer[state.fill..] {
            *v = F::zero();
        }
        Ok(())
    }

    /// Feeds samples (any length; 200 ms = 6400 samples is the usual
    /// cadence) and returns a non-mutating snapshot prediction.
    pub fn process_chunk(
        &mut self,
        state: &mut StreamState<F>,
        samples: &[F],
    ) -> Result<Prediction<F>> {
        if state.padded {
            return Err(Error::domain(
                "stream already finalized with tail padding".to_string(),
            ));
        }
        let n_fft = self.model.config.n_fft;
        let mut rest = samples;
        while !rest.is_empty() {
            let want = n_fft - state.fill;
            let take = want.min(rest.len());
            state.buffer[state.fill..state.fill + take].copy_from_slice(&rest[..take]);
            state.fill += take;
            rest = &rest[take..];
            if state.fill == n_fft {
                self.emit_frame(state)?;
            }
        }
        state.total_samples += samples.len() as u64;
        self.snapshot(state)
    }

    /// Running prediction from the attention accumulator without
    /// mutating it. Before the first frame this is the model's
    /// zero-context response.
    pub fn snapshot(&self, state: &StreamState<F>) -> Result<Prediction<F>> {
        let ctx = if state.attn.count == 0 {
            vec![F::zero(); self.model.config.hidden]
        } else {
            state.attn.context()?
        };
        let probs = classify(&self.model, &ctx);
        let class_index = argmax(&probs);
        Ok(Prediction {
            class_name: self.class_name(class_index),
            probs,
            class_index,
        })
    }

    /// Final classification. Streams shorter than one analysis window
    /// are zero-padded to a single frame; longer streams discard the
    /// trailing partial window, matching offline frame arithmetic.
    /// Idempotent: calling twice returns identical results.
    pub fn finalize(&mut self, state: &mut StreamState<F>) -> Result<Prediction<F>> {
        if state.total_samples == 0 {
            return Err(Error::domain("finalize on an empty stream".to_string()));
        }
        let n_fft = self.model.config.n_fft;
        if state.frames_emitted == 0 && !state.padded {
            debug_assert!(state.fill < n_fft);
            for v in &mut state.buffer[state.fill..] {
                *v = F::zero();
            }
            state.fill = n_fft;
            self.emit_frame(state)?;
            state.padded = true;
        }
        let ctx = state.attn.context()?;
        let logits = class_logits(&self.model, &ctx);
        let mut probs = logits;
        crate::num::softmax_in_place(&mut probs);
        let class_index = argmax(&probs);
        Ok(Prediction {
            class_name: self.class_name(class_index),
            probs,
            class_index,
        })
    }

    /// Final logits (pre-softmax): the quantity the equivalence
    /// properties compare.
    pub fn finalize_logits(&mut self, state: &mut StreamState<F>) -> Result<Vec<F>> {
        if state.total_samples == 0 {
            return Err(Error::domain("finalize on an empty stream".to_string()));
        }
        if state.frames_emitted == 0 && !state.padded {
            for v in &mut state.buffer[state.fill..] {
                *v = F::zero();
            }
            state.fill = self.model.config.n_fft;
            self.emit_frame(state)?;
            state.padded = true;
        }
        let ctx = state.attn.context()?;
        Ok(class_logits(&self.model, &ctx))
    }
}

fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Offline reference pipeline: whole signal in one pass through the
/// batch code path (frozen normalization statistics). Returns logits.
pub fn offline_logits<F: Real>(model: &ModelParams<F>, samples: &[F]) -> Result<Vec<F>> {
    let bank = model.materialize_bank()?;
    let mut fe = Frontend::new(bank, model.config.n_fft, model.config.hop)?;
    let frames = fe.stft().frame_count(samples.len());
    let feats = if frames == 0 {
        // short input: zero-pad to one window, as finalize does
        let mut padded = samples.to_vec();
        padded.resize(model.config.n_fft, F::zero());
        fe.forward_signal(&padded)
    } else {
        fe.forward_signal(samples)
    };
    let t = feats.len() / model.config.n_bins;
    let seq = Seq3::from_data(feats, 1, t, model.config.n_bins);
    let (enc, _) = encoder_forward_batch(model, &seq, Mode::Eval);
    let frames_vec: Vec<Vec<F>> = (0..t).map(|ti| enc.at(0, ti).to_vec()).collect();
    let cache = head_forward(model, &frames_vec);
    Ok(cache.logits)
}

/// Offline probabilities.
pub fn offline_infer<F: Real>(model: &ModelParams<F>, samples: &[F]) -> Result<Vec<F>> {
    let mut logits = offline_logits(model, samples)?;
    crate::num::softmax_in_place(&mut logits);
    Ok(logits)
}

/// Working-memory accounting for one live stream of this model.
#[derive(Debug, Clone)]
pub struct MemoryReport {
    pub param_bytes: usize,
    pub state_bytes: usize,
    pub scratch_bytes: usize,
    pub stft_bytes: usize,
}

impl MemoryReport {
    pub fn total(&self) -> usize {
        self.param_bytes + self.state_bytes + self.scratch_bytes + self.stft_bytes
    }
}

/// Computes the documented memory formula for a model:
/// parameters + stream state + encoder scratch + FFT workspace.
pub fn memory_report<F: Real>(model: &ModelParams<F>) -> Result<MemoryReport> {
    let scalar = std::mem::size_of::<F>();
    let mut params = 0usize;
    model.visit(&mut |info, _| params += info.len);
    let state = StreamState::fresh(model);
    let scratch = EncoderScratch::new(model);
    // FFT workspace: complex in-place buffer + plan scratch + window +
    // power spectrum + feature row
    let n_fft = model.config.n_fft;
    let stft_bytes =
        (2 * n_fft + 2 * n_fft + n_fft + (n_fft / 2 + 1) + model.config.n_bins) * scalar;
    Ok(MemoryReport {
        param_bytes: params * scalar,
        state_bytes: state.byte_size(),
        scratch_bytes: scratch.byte_size(),
        stft_bytes,
    })
}
