//! Int8 model export: per-tensor symmetric weight quantization with an
//! activation-range calibration table and a per-layer quality report.
//!
//! Only the multiplicative network weights are quantized. Biases,
//! normalization parameters, running statistics, and the filterbank's
//! breakpoint/width stay in float: they are tiny, and constrained
//! int8 kernels consume them in higher precision anyway.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bytes::{put_f64, put_str, put_u32, put_u64, Reader};
use crate::dataset::segment::percentile;
use crate::encoder::{encoder_forward_batch, Mode, Seq3};
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::head::head_forward;
use crate::model::{ModelConfig, ModelParams};
use crate::num::{lit, Real};

pub const QUANT_MAGIC: &[u8; 4] = b"WQNT";
pub const QUANT_VERSION: u32 = 1;
/// Minimum calibration material for trustworthy activation ranges.
pub const MIN_CALIBRATION_CLIPS: usize = 16;
/// Activation scales come from this percentile of observed magnitudes,
/// so a single outlier sample does not blow up the range.
pub const ACTIVATION_PERCENTILE: f64 = 99.9;

/// One int8 tensor: `values[i] * scale` approximates the original.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub scale: f64,
    pub values: Vec<i8>,
}

/// Quantized export artifact. Float-kept tensors (transported as f64)
/// preserve everything the int8 blobs do not cover, so the artifact is
/// self-contained.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub breakpoint: f64,
    pub width: f64,
    pub quantized: BTreeMap<String, QuantTensor>,
    pub float_kept: BTreeMap<String, Vec<f64>>,
    /// Per-site int8 activation scales from calibration.
    pub activations: Vec<(String, f64)>,
}

/// Per-tensor entry of the quantization quality report.
#[derive(Debug, Clone)]
pub struct QuantRow {
    pub path: String,
    pub len: usize,
    pub scale: f64,
    /// `10 log10(sum w^2 / sum (w - dequant(w))^2)`; infinite when the
    /// round trip is exact.
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct QuantReport {
    pub rows: Vec<QuantRow>,
    pub activations: Vec<(String, f64)>,
}

impl QuantReport {
    /// Worst per-tensor SNR in dB (infinite for an empty report).
    pub fn min_snr_db(&self) -> f64 {
        self.rows.iter().map(|r| r.snr_db).fold(f64::INFINITY, f64::min)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("tensor                             values      scale     snr_db\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<34} {:>6} {:>10.3e} {:>10.2}\n",
                r.path, r.len, r.scale, r.snr_db
            ));
        }
        out.push_str("\nactivation site                     scale\n");
        for (site, scale) in &self.activations {
            out.push_str(&format!("{site:<34} {scale:>10.3e}\n"));
        }
        out
    }
}

/// Symmetric per-tensor scheme: scale `max|w| / 127`, zero tensors get
/// scale 1 by convention. Values round to the nearest step and clamp
/// to `[-127, 127]`, so the dequantized error is at most `scale / 2`.
fn quantize_tensor<F: Real>(values: &[F]) -> QuantTensor {
    let max_abs = values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.to_f64().unwrap_or(0.0).abs()));
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let q = values
        .iter()
        .map(|v| {
            let r = (v.to_f64().unwrap_or(0.0) / scale).round();
            r.clamp(-127.0, 127.0) as i8
        })
        .collect();
    QuantTensor { scale, values: q }
}

fn snr_db<F: Real>(values: &[F], qt: &QuantTensor) -> f64 {
    let mut signal = 0.0f64;
    let mut noise = 0.0f64;
    for (v, &q) in values.iter().zip(&qt.values) {
        let w = v.to_f64().unwrap_or(0.0);
        let e = w - q as f64 * qt.scale;
        signal += w * w;
        noise += e * e;
    }
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

/// Runs one clip through the float pipeline recording the magnitude of
/// every intermediate activation per named site.
fn record_activations<F: Real>(
    model: &ModelParams<F>,
    samples: &[F],
    sites: &mut BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let push = |sites: &mut BTreeMap<String, Vec<f64>>, site: &str, values: &[F]| {
        let dst = sites.entry(site.to_string()).or_default();
        dst.extend(values.iter().map(|v| v.to_f64().unwrap_or(0.0).abs()));
    };

    let bank = model.materialize_bank()?;
    let mut fe = Frontend::new(bank, model.config.n_fft, model.config.hop)?;
    let feats = if fe.stft().frame_count(samples.len()) == 0 {
        let mut padded = samples.to_vec();
        padded.resize(model.config.n_fft, F::zero());
        fe.forward_signal(&padded)
    } else {
        fe.forward_signal(samples)
    };
    push(sites, "frontend.features", &feats);

    let t = feats.len() / model.config.n_bins;
    let seq = Seq3::from_data(feats, 1, t, model.config.n_bins);
    let (enc, cache) = encoder_forward_batch(model, &seq, Mode::Eval);
    if let Some(first) = cache.blocks.first() {
        // each block caches its input, so block 0 holds the projection
        // output and block i+1 holds block i's output
        push(sites, "encoder.input_proj", &first.x_in.data);
    }
    for (i, b) in cache.blocks.iter().enumerate().skip(1) {
        push(sites, &format!("encoder.block{}.out", i - 1), &b.x_in.data);
    }
    push(
        sites,
        &format!("encoder.block{}.out", model.blocks.len() - 1),
        &enc.data,
    );

    let frames: Vec<Vec<F>> = (0..t).map(|ti| enc.at(0, ti).to_vec()).collect();
    let head = head_forward(model, &frames);
    for h in &head.hs {
        push(sites, "head.gru.hidden", h);
    }
    push(sites, "head.attention.context", &head.context);
    push(sites, "head.logits", &head.logits);
    Ok(())
}

/// Quantizes a model given calibration audio (32 kHz mono clips).
///
/// Weight tensors get symmetric int8 with per-tensor scales; the
/// calibration clips drive per-site activation scales taken at the
/// 99.9th percentile of observed magnitudes. Also returns the
/// per-layer SNR report.
pub fn quantize_int8<F: Real>(
    model: &ModelParams<F>,
    calibration: &[Vec<F>],
) -> Result<(QuantizedModel, QuantReport)> {
    if calibration.len() < MIN_CALIBRATION_CLIPS {
        return Err(Error::data(format!(
            "{} calibration clips provided, need at least {MIN_CALIBRATION_CLIPS}",
            calibration.len()
        )));
    }

    let mut quantized = BTreeMap::new();
    let mut float_kept = BTreeMap::new();
    let mut rows = Vec::new();
    model.visit(&mut |info, values| {
        if info.weight_like() {
            let qt = quantize_tensor(values);
            rows.push(QuantRow {
                path: info.path.clone(),
                len: values.len(),
                scale: qt.scale,
                snr_db: snr_db(values, &qt),
            });
            quantized.insert(info.path, qt);
        } else {
            float_kept.insert(
                info.path,
                values.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect(),
            );
        }
    });

    let mut sites: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for clip in calibration {
        record_activations(model, clip, &mut sites)?;
    }
    let activations: Vec<(String, f64)> = sites
        .into_iter()
        .map(|(site, mags)| {
            let p = percentile(&mags, ACTIVATION_PERCENTILE);
            (site, if p > 0.0 { p / 127.0 } else { 1.0 })
        })
        .collect();

    let fb = model.filterbank_params();
    let q = QuantizedModel {
        config: model.config.clone(),
        breakpoint: fb.breakpoint.to_f64().unwrap(),
        width: fb.width.to_f64().unwrap(),
        quantized,
        float_kept,
        activations: activations.clone(),
    };
    let report = QuantReport { rows, activations };
    Ok((q, report))
}

impl QuantizedModel {
    /// Reconstructs a float model with every quantized tensor replaced
    /// by its dequantized values — the reference semantics for int8
    /// inference.
    pub fn dequantize<F: Real>(&self) -> Result<ModelParams<F>> {
        let mut model = ModelParams::<F>::zeros(&self.config)?;
        let mut failure: Option<Error> = None;
        model.visit_mut(&mut |info, values| {
            if failure.is_some() {
                return;
            }
            if let Some(qt) = self.quantized.get(&info.path) {
                if qt.values.len() != values.len() {
                    failure = Some(Error::shape(format!(
                        "tensor {}: artifact has {} values, model expects {}",
                        info.path,
                        qt.values.len(),
                        values.len()
                    )));
                    return;
                }
                for (dst, &q) in values.iter_mut().zip(&qt.values) {
                    *dst = lit::<F>(q as f64 * qt.scale);
                }
            } else if let Some(fs) = self.float_kept.get(&info.path) {
                if fs.len() != values.len() {
                    failure = Some(Error::shape(format!(
                        "tensor {}: artifact has {} values, model expects {}",
                        info.path,
                        fs.len(),
                        values.len()
                    )));
                    return;
                }
                for (dst, &f) in values.iter_mut().zip(fs) {
                    *dst = lit::<F>(f);
                }
            } else {
                failure = Some(Error::archive(format!(
                    "artifact is missing tensor {}",
                    info.path
                )));
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(model),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(QUANT_MAGIC);
        put_u32(&mut out, QUANT_VERSION);
        let config_section = crate::archive::encode_config(&self.config, self.breakpoint, self.width);
        put_u64(&mut out, config_section.len() as u64);
        out.extend_from_slice(&config_section);

        put_u32(&mut out, self.quantized.len() as u32);
        for (path, qt) in &self.quantized {
            put_str(&mut out, path);
            put_f64(&mut out, qt.scale);
            put_u64(&mut out, qt.values.len() as u64);
            out.extend(qt.values.iter().map(|&v| v as u8));
        }
        put_u32(&mut out, self.float_kept.len() as u32);
        for (path, values) in &self.float_kept {
            put_str(&mut out, path);
            put_u64(&mut out, values.len() as u64);
            for &v in values {
                put_f64(&mut out, v);
            }
        }
        put_u32(&mut out, self.activations.len() as u32);
        for (site, scale) in &self.activations {
            put_str(&mut out, site);
            put_f64(&mut out, *scale);
        }
        let checksum = Sha256::digest(&out);
        out.extend_from_slice(&checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Checksum);
        }
        let (payload, stored) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != stored {
            return Err(Error::Checksum);
        }
        let mut r = Reader::new(payload);
        if r.take(4)? != QUANT_MAGIC {
            return Err(Error::archive("not an int8 model artifact (bad magic)"));
        }
        let version = r.u32()?;
        if version != QUANT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: QUANT_VERSION,
            });
        }
        let config_len = r.u64()? as usize;
        let mut cr = Reader::new(r.take(config_len)?);
        let (config, breakpoint, width) = crate::archive::decode_config(&mut cr)?;

        let n_quant = r.u32()? as usize;
        let mut quantized = BTreeMap::new();
        for _ in 0..n_quant {
            let path = r.string()?;
            let scale = r.f64()?;
            let len = r.u64()? as usize;
            let raw = r.take(len)?;
            quantized.insert(
                path,
                QuantTensor {
                    scale,
                    values: raw.iter().map(|&b| b as i8).collect(),
                },
            );
        }
        let n_float = r.u32()? as usize;
        let mut float_kept = BTreeMap::new();
        for _ in 0..n_float {
            let path = r.string()?;
            let len = r.u64()? as usize;
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                values.push(r.f64()?);
            }
            float_kept.insert(path, values);
        }
        let n_act = r.u32()? as usize;
        let mut activations = Vec::with_capacity(n_act);
        for _ in 0..n_act {
            let site = r.string()?;
            let scale = r.f64()?;
            activations.push((site, scale));
        }
        if r.remaining() != 0 {
            return Err(Error::archive("trailing bytes in int8 artifact"));
        }
        Ok(QuantizedModel {
            config,
            breakpoint,
            width,
            quantized,
            float_kept,
            activations,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Fraction of clips on which the int8 path picks the same class as
/// the float path.
pub fn top1_agreement<F: Real>(
    model: &ModelParams<F>,
    quantized: &QuantizedModel,
    clips: &[Vec<F>],
) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::data("agreement check needs at least one clip"));
    }
    let deq: ModelParams<F> = quantized.dequantize()?;
    let mut same = 0usize;
    for clip in clips {
        let a = crate::streaming::offline_logits(model, clip)?;
        let b = crate::streaming::offline_logits(&deq, clip)?;
        let argmax = |xs: &[F]| {
            xs.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        };
        if argmax(&a) == argmax(&b) {
            same += 1;
        }
    }
    Ok(same as f64 / clips.len() as f64)
}
