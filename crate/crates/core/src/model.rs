//! Model configuration and the parameter registry.
//!
//! All weights live in flat `Vec<F>` tensors addressed by stable string
//! paths (`encoder.block0.pw.weight`, `head.gru.w_iz`, ...). The
//! registry drives everything that needs to see every tensor uniformly:
//! the optimizer, the gradient tape, archive I/O, quantization, and the
//! parameter-count report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::{
    linear_filterbank, warped_centers, FilterbankParams, FrontendKind,
};
use crate::num::{lit, Real};

/// Static architecture description; everything learnable lives in
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Species names; the classifier adds a trailing `no_bird` class.
    pub species: Vec<String>,
    pub frontend: FrontendKind,
    pub n_bins: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    pub init_breakpoint: f64,
    pub init_width: f64,
    /// Output channels of the three encoder blocks.
    pub channels: [usize; 3],
    pub kernel: usize,
    pub dilations: [usize; 3],
    /// SE bottleneck is `channels / se_reduction`, at least 1.
    pub se_reduction: usize,
    /// GRU hidden size.
    pub hidden: usize,
}

impl ModelConfig {
    /// Deployment configuration: 70 species + no_bird, 64 filterbank
    /// bins, encoder widths (96, 96, 192), 64-wide GRU. Lands within a
    /// few percent of 136k trainable parameters.
    pub fn full(species: Vec<String>) -> Self {
        ModelConfig {
            species,
            frontend: FrontendKind::SemiLearnable,
            n_bins: 64,
            n_fft: 512,
            hop: 320,
            sample_rate: 32_000,
            f_min: 150.0,
            f_max: 16_000.0,
            init_breakpoint: 8000.0,
            init_width: 200.0,
            channels: [96, 96, 192],
            kernel: 5,
            dilations: [1, 2, 4],
            se_reduction: 8,
            hidden: 64,
        }
    }

    /// Default full configuration with numbered placeholder species.
    pub fn full_default() -> Self {
        Self::full((0..70).map(|i| format!("species_{i:02}")).collect())
    }

    /// Small configuration for synthetic tasks and the test suite.
    pub fn toy(species: Vec<String>) -> Self {
        ModelConfig {
            species,
            frontend: FrontendKind::SemiLearnable,
            n_bins: 32,
            n_fft: 512,
            hop: 320,
            sample_rate: 32_000,
            f_min: 150.0,
            f_max: 16_000.0,
            init_breakpoint: 8000.0,
            init_width: 200.0,
            channels: [16, 16, 32],
            kernel: 5,
            dilations: [1, 2, 4],
            se_reduction: 8,
            hidden: 32,
        }
    }

    /// Minimal configuration for finite-difference gradient checks:
    /// 2 filters, hidden size 3, and a short FFT so a handful of frames
    /// covers the whole pipeline.
    pub fn tiny(num_species: usize) -> Self {
        ModelConfig {
            species: (0..num_species).map(|i| format!("s{i}")).collect(),
            frontend: FrontendKind::SemiLearnable,
            n_bins: 2,
            n_fft: 32,
            hop: 16,
            sample_rate: 2000,
            f_min: 100.0,
            f_max: 900.0,
            init_breakpoint: 400.0,
            init_width: 20.0,
            channels: [3, 3, 4],
            kernel: 5,
            dilations: [1, 2, 4],
            se_reduction: 2,
            hidden: 3,
        }
    }

    /// Total classifier outputs: species plus the `no_bird` class.
    pub fn num_classes(&self) -> usize {
        self.species.len() + 1
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn se_hidden(&self, channels: usize) -> usize {
        (channels / self.se_reduction).max(1)
    }

    /// Frames produced by a standard 3 s clip.
    pub fn frames_per_clip(&self) -> usize {
        let len = 3 * self.sample_rate as usize;
        (len - self.n_fft) / self.hop + 1
    }

    pub fn clip_samples(&self) -> usize {
        3 * self.sample_rate as usize
    }

    /// Filterbank geometry carrying the given learnable values.
    pub fn filterbank_params<F: Real>(&self, breakpoint: F, width: F) -> FilterbankParams<F> {
        FilterbankParams {
            breakpoint,
            width,
            f_min: lit(self.f_min),
            f_max: lit(self.f_max),
            n_bins: self.n_bins,
            n_fft: self.n_fft,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::config("species list is empty"));
        }
        if self.kernel < 1 || self.dilations.iter().any(|&d| d < 1) {
            return Err(Error::config("kernel and dilations must be >= 1"));
        }
        if self.hidden == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("zero-width layer"));
        }
        self.filterbank_params(lit::<f64>(self.init_breakpoint), lit::<f64>(self.init_width))
            .validate()
    }
}

/// Dense affine map, `weight` row-major `out_dim x in_dim`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<F: Real> Linear<F> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        init_uniform(&mut self.weight, self.in_dim, rng);
    }

    pub fn forward(&self, x: &[F], out: &mut [F]) {
        crate::num::matvec(&self.weight, x, self.out_dim, self.in_dim, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = *o + *b;
        }
    }
}

/// One encoder block: causal dilated depthwise conv, pointwise mix,
/// causal squeeze-excitation, per-channel normalization, relu, skip.
#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    /// Depthwise taps, row-major `c_in x kernel`; tap `kernel-1` is the
    /// current frame, tap `j` lags by `(kernel-1-j) * dilation`.
    pub dw_weight: Vec<F>,
    pub dw_bias: Vec<F>,
    pub pw: Linear<F>,
    /// SE bottleneck matrices (no biases): reduce `se_hidden x c_out`,
    /// expand `c_out x se_hidden`.
    pub se_reduce: Vec<F>,
    pub se_expand: Vec<F>,
    pub norm_scale: Vec<F>,
    pub norm_shift: Vec<F>,
    /// Running statistics (buffers, not trainable).
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    /// 1x1 projection on the skip path when widths differ.
    pub skip: Option<Linear<F>>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub se_hidden: usize,
}

impl<F: Real> ConvBlock<F> {
    fn zeros(cfg: &ModelConfig, c_in: usize, c_out: usize, dilation: usize) -> Self {
        let se_hidden = cfg.se_hidden(c_out);
        ConvBlock {
            dw_weight: vec![F::zero(); c_in * cfg.kernel],
            dw_bias: vec![F::zero(); c_in],
            pw: Linear::zeros(c_in, c_out),
            se_reduce: vec![F::zero(); se_hidden * c_out],
            se_expand: vec![F::zero(); c_out * se_hidden],
            norm_scale: vec![F::one(); c_out],
            norm_shift: vec![F::zero(); c_out],
            running_mean: vec![F::zero(); c_out],
            running_var: vec![F::one(); c_out],
            skip: (c_in != c_out).then(|| Linear::zeros(c_in, c_out)),
            c_in,
            c_out,
            kernel: cfg.kernel,
            dilation,
            se_hidden,
        }
    }

    /// Frames of left context the depthwise conv needs.
    pub fn left_context(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }
}

/// GRU weights. Input matrices are `hidden x in_dim`, recurrent
/// matrices `hidden x hidden`; separate input-side and recurrent-side
/// biases per gate.
#[derive(Debug, Clone)]
pub struct GruParams<F> {
    pub w_iz: Vec<F>,
    pub w_ir: Vec<F>,
    pub w_in: Vec<F>,
    pub w_hz: Vec<F>,
    pub w_hr: Vec<F>,
    pub w_hn: Vec<F>,
    pub b_iz: Vec<F>,
    pub b_ir: Vec<F>,
    pub b_in: Vec<F>,
    pub b_hz: Vec<F>,
    pub b_hr: Vec<F>,
    pub b_hn: Vec<F>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl<F: Real> GruParams<F> {
    fn zeros(in_dim: usize, hidden: usize) -> Self {
        GruParams {
            w_iz: vec![F::zero(); hidden * in_dim],
            w_ir: vec![F::zero(); hidden * in_dim],
            w_in: vec![F::zero(); hidden * in_dim],
            w_hz: vec![F::zero(); hidden * hidden],
            w_hr: vec![F::zero(); hidden * hidden],
            w_hn: vec![F::zero(); hidden * hidden],
            b_iz: vec![F::zero(); hidden],
            b_ir: vec![F::zero(); hidden],
            b_in: vec![F::zero(); hidden],
            b_hz: vec![F::zero(); hidden],
            b_hr: vec![F::zero(); hidden],
            b_hn: vec![F::zero(); hidden],
            in_dim,
            hidden,
        }
    }
}

/// Frontend weights; only the variants' tensors differ by kind.
#[derive(Debug, Clone)]
pub enum FrontendWeights<F> {
    /// Learnable breakpoint (Hz) and transition width.
    Semi { breakpoint: F, width: F },
    /// Nothing learnable (mel or linear bank fixed by config).
    Fixed,
    /// Dense `n_bins x n_freqs` matrix.
    Full { matrix: Vec<F> },
}

/// The complete set of model tensors.
#[derive(Debug, Clone)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub frontend: FrontendWeights<F>,
    pub input_proj: Linear<F>,
    pub blocks: Vec<ConvBlock<F>>,
    pub gru: GruParams<F>,
    /// Attention score vector over the hidden state, plus its bias.
    pub attn_score: Vec<F>,
    pub attn_bias: Vec<F>,
    pub classifier: Linear<F>,
}

/// Which optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Everything except the frontend's learnable filter parameters.
    Network,
    /// The filterbank parameters (breakpoint/width or the dense matrix).
    Filter,
}

/// Registry metadata for one tensor.
#[derive(Debug, Clone)]
pub struct TensorInfo {
    pub path: String,
    pub len: usize,
    /// Buffers (running statistics) are saved but never optimized.
    pub trainable: bool,
    pub group: ParamGroup,
}

impl TensorInfo {
    /// True for the multiplicative network weight matrices — the
    /// tensors that get weight decay and int8 quantization. Biases
    /// (including the GRU's `b_*` pairs), normalization affines and
    /// buffers, and the filter parameters are excluded.
    pub fn weight_like(&self) -> bool {
        self.trainable
            && self.group == ParamGroup::Network
            && !self.path.contains("bias")
            && !self.path.contains("norm.")
            && !self.path.contains(".b_")
    }
}

fn init_uniform<F: Real>(w: &mut [F], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (1.0 / fan_in as f64).sqrt();
    for v in w.iter_mut() {
        *v = lit(rng.gen_range(-bound..bound));
    }
}

impl<F: Real> ModelParams<F> {
    /// All-zero parameters (norm scale 1, running var 1) for the config.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.channels;
        let frontend = match config.frontend {
            FrontendKind::SemiLearnable => FrontendWeights::Semi {
                breakpoint: lit(config.init_breakpoint),
                width: lit(config.init_width),
            },
            FrontendKind::FixedMel | FrontendKind::FixedLinear => FrontendWeights::Fixed,
            FrontendKind::FullyLearnable => FrontendWeights::Full {
                matrix: vec![F::zero(); config.n_bins * config.n_freqs()],
            },
        };
        Ok(ModelParams {
            frontend,
            input_proj: Linear::zeros(config.n_bins, c1),
            blocks: vec![
                ConvBlock::zeros(config, c1, c1, config.dilations[0]),
                ConvBlock::zeros(config, c1, c2, config.dilations[1]),
                ConvBlock::zeros(config, c2, c3, config.dilations[2]),
            ],
            gru: GruParams::zeros(c3, config.hidden),
            attn_score: vec![F::zero(); config.hidden],
            attn_bias: vec![F::zero(); 1],
            classifier: Linear::zeros(config.hidden, config.num_classes()),
            config: config.clone(),
        })
    }

    /// Seeded random initialization: uniform by fan-in for weights, zero
    /// biases, identity normalization, filter parameters from config.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        if let FrontendWeights::Full { matrix } = &mut m.frontend {
            // start the dense bank at the fixed linear bank
            let p = config.filterbank_params(lit(config.init_breakpoint), lit(config.init_width));
            let fb = linear_filterbank(&p)?;
            matrix.copy_from_slice(&fb.weights);
        }
        m.input_proj.init(rng);
        for b in &mut m.blocks {
            init_uniform(&mut b.dw_weight, b.kernel, rng);
            b.pw.init(rng);
            init_uniform(&mut b.se_reduce, b.c_out, rng);
            init_uniform(&mut b.se_expand, b.se_hidden, rng);
            if let Some(skip) = &mut b.skip {
                skip.init(rng);
            }
        }
        let h = config.hidden;
        let gru = &mut m.gru;
        for w in [&mut gru.w_iz, &mut gru.w_ir, &mut gru.w_in] {
            init_uniform(w, gru.in_dim, rng);
        }
        for w in [&mut gru.w_hz, &mut gru.w_hr, &mut gru.w_hn] {
            init_uniform(w, h, rng);
        }
        init_uniform(&mut m.attn_score, h, rng);
        m.classifier.init(rng);
        Ok(m)
    }

    /// Same structure with every tensor zeroed — gradient/moment storage.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config).expect("config already validated");
        // zeros() leaves norm scale / running var at 1; gradient storage
        // must start at exactly 0 everywhere
        for b in &mut z.blocks {
            b.norm_scale.iter_mut().for_each(|v| *v = F::zero());
            b.running_var.iter_mut().for_each(|v| *v = F::zero());
        }
        if let FrontendWeights::Semi { breakpoint, width } = &mut z.frontend {
            *breakpoint = F::zero();
            *width = F::zero();
        }
        z
    }

    /// Current filterbank geometry (semi-learnable carries live values).
    pub fn filterbank_params(&self) -> FilterbankParams<F> {
        match &self.frontend {
            FrontendWeights::Semi { breakpoint, width } => {
                self.config.filterbank_params(*breakpoint, *width)
            }
            _ => self.config.filterbank_params(
                lit(self.config.init_breakpoint),
                lit(self.config.init_width),
            ),
        }
    }

    /// Builds the bank the current weights describe.
    pub fn materialize_bank(&self) -> Result<crate::frontend::FilterbankMatrix<F>> {
        match &self.frontend {
            FrontendWeights::Semi { .. } => {
                crate::frontend::build_filterbank(&self.filterbank_params())
            }
            FrontendWeights::Fixed => {
                crate::frontend::build_bank_for_kind(self.config.frontend, &self.filterbank_params())
            }
            FrontendWeights::Full { matrix } => {
                let p = self.filterbank_params();
                crate::frontend::dense_bank(
                    matrix,
                    self.config.n_bins,
                    self.config.n_freqs(),
                    &warped_centers(&p),
                )
            }
        }
    }

    /// Visits every tensor in registry order.
    pub fn visit(&self, f: &mut dyn FnMut(TensorInfo, &[F])) {
        let walk = |f: &mut dyn FnMut(TensorInfo, &[F]), path: String, t: &[F], trainable: bool, group: ParamGroup| {
            f(
                TensorInfo {
                    path,
                    len: t.len(),
                    trainable,
                    group,
                },
                t,
            );
        };
        match &self.frontend {
            FrontendWeights::Semi { breakpoint, width } => {
                walk(f, "frontend.breakpoint".into(), std::slice::from_ref(breakpoint), true, ParamGroup::Filter);
                walk(f, "frontend.width".into(), std::slice::from_ref(width), true, ParamGroup::Filter);
            }
            FrontendWeights::Fixed => {}
            FrontendWeights::Full { matrix } => {
                walk(f, "frontend.matrix".into(), matrix, true, ParamGroup::Filter);
            }
        }
        let net = ParamGroup::Network;
        walk(f, "encoder.input_proj.weight".into(), &self.input_proj.weight, true, net);
        walk(f, "encoder.input_proj.bias".into(), &self.input_proj.bias, true, net);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("encoder.block{i}.{s}");
            walk(f, p("dw.weight"), &b.dw_weight, true, net);
            walk(f, p("dw.bias"), &b.dw_bias, true, net);
            walk(f, p("pw.weight"), &b.pw.weight, true, net);
            walk(f, p("pw.bias"), &b.pw.bias, true, net);
            walk(f, p("se.reduce"), &b.se_reduce, true, net);
            walk(f, p("se.expand"), &b.se_expand, true, net);
            walk(f, p("norm.scale"), &b.norm_scale, true, net);
            walk(f, p("norm.shift"), &b.norm_shift, true, net);
            walk(f, p("norm.running_mean"), &b.running_mean, false, net);
            walk(f, p("norm.running_var"), &b.running_var, false, net);
            if let Some(skip) = &b.skip {
                walk(f, p("skip.weight"), &skip.weight, true, net);
                walk(f, p("skip.bias"), &skip.bias, true, net);
            }
        }
        let g = &self.gru;
        walk(f, "head.gru.w_iz".into(), &g.w_iz, true, net);
        walk(f, "head.gru.w_ir".into(), &g.w_ir, true, net);
        walk(f, "head.gru.w_in".into(), &g.w_in, true, net);
        walk(f, "head.gru.w_hz".into(), &g.w_hz, true, net);
        walk(f, "head.gru.w_hr".into(), &g.w_hr, true, net);
        walk(f, "head.gru.w_hn".into(), &g.w_hn, true, net);
        walk(f, "head.gru.b_iz".into(), &g.b_iz, true, net);
        walk(f, "head.gru.b_ir".into(), &g.b_ir, true, net);
        walk(f, "head.gru.b_in".into(), &g.b_in, true, net);
        walk(f, "head.gru.b_hz".into(), &g.b_hz, true, net);
        walk(f, "head.gru.b_hr".into(), &g.b_hr, true, net);
        walk(f, "head.gru.b_hn".into(), &g.b_hn, true, net);
        walk(f, "head.attention.score".into(), &self.attn_score, true, net);
        walk(f, "head.attention.score_bias".into(), &self.attn_bias, true, net);
        walk(f, "head.classifier.weight".into(), &self.classifier.weight, true, net);
        walk(f, "head.classifier.bias".into(), &self.classifier.bias, true, net);
    }

    /// Mutable visit in the same order as [`visit`](Self::visit).
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(TensorInfo, &mut [F])) {
        let walk = |f: &mut dyn FnMut(TensorInfo, &mut [F]), path: String, t: &mut [F], trainable: bool, group: ParamGroup| {
            f(
                TensorInfo {
                    path,
                    len: t.len(),
                    trainable,
                    group,
                },
                t,
            );
        };
        match &mut self.frontend {
            FrontendWeights::Semi { breakpoint, width } => {
                walk(f, "frontend.breakpoint".into(), std::slice::from_mut(breakpoint), true, ParamGroup::Filter);
                walk(f, "frontend.width".into(), std::slice::from_mut(width), true, ParamGroup::Filter);
            }
            FrontendWeights::Fixed => {}
            FrontendWeights::Full { matrix } => {
                walk(f, "frontend.matrix".into(), matrix, true, ParamGroup::Filter);
            }
        }
        let net = ParamGroup::Network;
        walk(f, "encoder.input_proj.weight".into(), &mut self.input_proj.weight, true, net);
        walk(f, "encoder.input_proj.bias".into(), &mut self.input_proj.bias, true, net);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |s: &str| format!("encoder.block{i}.{s}");
            walk(f, p("dw.weight"), &mut b.dw_weight, true, net);
            walk(f, p("dw.bias"), &mut b.dw_bias, true, net);
            walk(f, p("pw.weight"), &mut b.pw.weight, true, net);
            walk(f, p("pw.bias"), &mut b.pw.bias, true, net);
            walk(f, p("se.reduce"), &mut b.se_reduce, true, net);
            walk(f, p("se.expand"), &mut b.se_expand, true, net);
            walk(f, p("norm.scale"), &mut b.norm_scale, true, net);
            walk(f, p("norm.shift"), &mut b.norm_shift, true, net);
            walk(f, p("norm.running_mean"), &mut b.running_mean, false, net);
            walk(f, p("norm.running_var"), &mut b.running_var, false, net);
            if let Some(skip) = &mut b.skip {
                walk(f, p("skip.weight"), &mut skip.weight, true, net);
                walk(f, p("skip.bias"), &mut skip.bias, true, net);
            }
        }
        let g = &mut self.gru;
        walk(f, "head.gru.w_iz".into(), &mut g.w_iz, true, net);
        walk(f, "head.gru.w_ir".into(), &mut g.w_ir, true, net);
        walk(f, "head.gru.w_in".into(), &mut g.w_in, true, net);
        walk(f, "head.gru.w_hz".into(), &mut g.w_hz, true, net);
        walk(f, "head.gru.w_hr".into(), &mut g.w_hr, true, net);
        walk(f, "head.gru.w_hn".into(), &mut g.w_hn, true, net);
        walk(f, "head.gru.b_iz".into(), &mut g.b_iz, true, net);
        walk(f, "head.gru.b_ir".into(), &mut g.b_ir, true, net);
        walk(f, "head.gru.b_in".into(), &mut g.b_in, true, net);
        walk(f, "head.gru.b_hz".into(), &mut g.b_hz, true, net);
        walk(f, "head.gru.b_hr".into(), &mut g.b_hr, true, net);
        walk(f, "head.gru.b_hn".into(), &mut g.b_hn, true, net);
        walk(f, "head.attention.score".into(), &mut self.attn_score, true, net);
        walk(f, "head.attention.score_bias".into(), &mut self.attn_bias, true, net);
        walk(f, "head.classifier.weight".into(), &mut self.classifier.weight, true, net);
        walk(f, "head.classifier.bias".into(), &mut self.classifier.bias, true, net);
    }

    /// Registry metadata in visit order.
    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        self.visit(&mut |info, _| out.push(info));
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |info, _| {
            if info.trainable {
                n += info.len;
            }
        });
        n
    }

    /// Trainable parameter totals grouped by top-level component, plus
    /// the overall sum — the documented budget breakdown.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        self.visit(&mut |info, _| {
            if !info.trainable {
                return;
            }
            let key = {
                let mut parts = info.path.split('.');
                let a = parts.next().unwrap_or("");
                let b = parts.next().unwrap_or("");
                if a == "frontend" {
                    a.to_string()
                } else {
                    format!("{a}.{b}")
                }
            };
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += info.len,
                None => out.push((key, info.len)),
            }
        });
        let total = out.iter().map(|(_, n)| n).sum();
        out.push(("total".to_string(), total));
        out
    }

    /// Copies all trainable values into a flat vector (visit order).
    pub fn flatten_trainable(&self) -> Vec<F> {
        let mut out = Vec::new();
        self.visit(&mut |info, t| {
            if info.trainable {
                out.extend_from_slice(t);
            }
        });
        out
    }

    /// Writes a flat vector (from [`flatten_trainable`]) back in place.
    pub fn unflatten_trainable(&mut self, flat: &[F]) -> Result<()> {
        let mut off = 0;
        let mut err = None;
        self.visit_mut(&mut |info, t| {
            if !info.trainable || err.is_some() {
                return;
            }
            if off + t.len() > flat.len() {
                err = Some(Error::shape("flat vector too short for registry"));
                return;
            }
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
        if let Some(e) = err {
            return Err(e);
        }
        if off != flat.len() {
            return Err(Error::shape(format!(
                "flat vector has {} values, registry holds {off}",
                flat.len()
            )));
        }
        Ok(())
    }
}

/// Converts a model to a different scalar type (f32 <-> f64), used by
/// the f64 gradient-check harness and archive I/O.
pub fn convert<A: Real, B: Real>(src: &ModelParams<A>) -> ModelParams<B> {
    let mut dst = ModelParams::<B>::zeros(&src.config).expect("config already validated");
    let mut values: Vec<Vec<B>> = Vec::new();
    src.visit(&mut |_, t| {
        values.push(t.iter().map(|v| lit(v.to_f64().unwrap())).collect());
    });
    let mut it = values.into_iter();
    dst.visit_mut(&mut |_, t| {
        let v = it.next().expect("identical registries");
        t.copy_from_slice(&v);
    });
    dst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parameter_budget() {
        let m = ModelParams::<f32>::init(&ModelConfig::full_default(), 1).unwrap();
        let n = m.parameter_count();
        // hand count: frontend 2; input proj 64*96+96 = 6240;
        // block0/1: (96*5+96) + (96*96+96) + 2*96*12 + 2*96 = 12384 each;
        // block2: (96*5+96) + (96*192+192) + 2*192*24 + 2*192
        //         + skip 96*192+192 = 47424;
        // gru 3*(192*64 + 64*64 + 2*64) = 49536; attention 65;
        // classifier 64*71+71 = 4615
        let want = 2 + 6240 + 12384 + 12384 + 47424 + 49536 + 65 + 4615;
        assert_eq!(n, want);
        assert_eq!(n, 132_650);
        // within ±10% of the 136k budget
        assert!((n as f64 - 136_000.0).abs() / 136_000.0 < 0.10);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let m = ModelParams::<f32>::init(&ModelConfig::toy(vec!["a".into(), "b".into()]), 2).unwrap();
        let breakdown = m.parameter_breakdown();
        let total = breakdown.last().unwrap().1;
        let sum: usize = breakdown[..breakdown.len() - 1].iter().map(|(_, n)| n).sum();
        assert_eq!(total, sum);
        assert_eq!(total, m.parameter_count());
        assert!(breakdown.iter().any(|(k, _)| k == "frontend"));
        assert!(breakdown.iter().any(|(k, _)| k == "head.gru"));
    }

    #[test]
    fn registry_paths_unique_and_buffers_untrainable() {
        let m = ModelParams::<f32>::init(&ModelConfig::full_default(), 3).unwrap();
        let infos = m.tensor_infos();
        let mut paths: Vec<&str> = infos.iter().map(|i| i.path.as_str()).collect();
        let n = paths.len();
        paths.sort_unstable();
        paths.dedup();
        assert_eq!(paths.len(), n, "duplicate registry path");
        for info in &infos {
            let is_buffer = info.path.contains("running_");
            assert_eq!(info.trainable, !is_buffer, "{}", info.path);
            let is_filter = info.path.starts_with("frontend.");
            assert_eq!(info.group == ParamGroup::Filter, is_filter, "{}", info.path);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = ModelConfig::tiny(2);
        let m = ModelParams::<f64>::init(&cfg, 4).unwrap();
        let flat = m.flatten_trainable();
        assert_eq!(flat.len(), m.parameter_count());
        let mut m2 = ModelParams::<f64>::zeros(&cfg).unwrap();
        m2.unflatten_trainable(&flat).unwrap();
        assert_eq!(m2.flatten_trainable(), flat);
        // wrong length rejected
        assert!(m2.unflatten_trainable(&flat[..flat.len() - 1]).is_err());
    }

    #[test]
    fn zeros_like_is_all_zero() {
        let m = ModelParams::<f32>::init(&ModelConfig::tiny(3), 5).unwrap();
        let z = m.zeros_like();
        z.visit(&mut |info, t| {
            assert!(t.iter().all(|&v| v == 0.0), "{} not zeroed", info.path);
        });
    }

    #[test]
    fn convert_round_trips_exactly_for_f32_values() {
        let m = ModelParams::<f32>::init(&ModelConfig::tiny(2), 6).unwrap();
        let d: ModelParams<f64> = convert(&m);
        let back: ModelParams<f32> = convert(&d);
        assert_eq!(m.flatten_trainable(), back.flatten_trainable());
    }

    #[test]
    fn visit_orders_agree() {
        let mut m = ModelParams::<f32>::init(&ModelConfig::full_default(), 7).unwrap();
        let a: Vec<String> = m.tensor_infos().iter().map(|i| i.path.clone()).collect();
        let mut b = Vec::new();
        m.visit_mut(&mut |info, _| b.push(info.path));
        assert_eq!(a, b);
    }

    #[test]
    fn fully_learnable_has_matrix_tensor() {
        let mut cfg = ModelConfig::toy(vec!["a".into(), "b".into()]);
        cfg.frontend = FrontendKind::FullyLearnable;
        let m = ModelParams::<f32>::init(&cfg, 8).unwrap();
        let infos = m.tensor_infos();
        assert!(infos.iter().any(|i| i.path == "frontend.matrix" && i.len == 32 * 257));
        assert!(!infos.iter().any(|i| i.path == "frontend.breakpoint"));
        // matrix starts at the linear bank: all finite, rows sum positive
        let bank = m.materialize_bank().unwrap();
        assert!(bank.row_sums().iter().all(|&s| s > 0.0));
    }
}
