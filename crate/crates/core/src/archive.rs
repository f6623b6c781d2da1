//! Versioned binary weight archive.
//!
//! Layout (all little-endian, sizes explicit, nothing defaulted):
//! magic `WMDL`, format version, a self-contained configuration
//! section followed by its SHA-256, the parameter blobs in registry
//! order (path, length, values as f64), and a trailing SHA-256 over
//! everything before it. Floats travel as f64, so an f32 model
//! round-trips bit-exactly.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bytes::{put_f64, put_slice, put_str, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::frontend::FrontendKind;
use crate::model::{ModelConfig, ModelParams};
use crate::num::Real;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"WMDL";
pub const ARCHIVE_VERSION: u32 = 1;

pub(crate) fn encode_config(cfg: &ModelConfig, breakpoint: f64, width: f64) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, cfg.species.len() as u32);
    for s in &cfg.species {
        put_str(&mut out, s);
    }
    put_str(&mut out, cfg.frontend.as_str());
    put_u32(&mut out, cfg.n_bins as u32);
    put_u32(&mut out, cfg.n_fft as u32);
    put_u32(&mut out, cfg.hop as u32);
    put_u32(&mut out, cfg.sample_rate);
    put_f64(&mut out, cfg.f_min);
    put_f64(&mut out, cfg.f_max);
    put_f64(&mut out, breakpoint);
    put_f64(&mut out, width);
    for c in cfg.channels {
        put_u32(&mut out, c as u32);
    }
    put_u32(&mut out, cfg.kernel as u32);
    for d in cfg.dilations {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, cfg.se_reduction as u32);
    put_u32(&mut out, cfg.hidden as u32);
    out
}

pub(crate) fn decode_config(r: &mut Reader) -> Result<(ModelConfig, f64, f64)> {
    let n_species = r.u32()? as usize;
    let mut species = Vec::with_capacity(n_species);
    for _ in 0..n_species {
        species.push(r.string()?);
    }
    let kind: FrontendKind = r
        .string()?
        .parse()
        .map_err(|e: Error| Error::Archive(e.to_string()))?;
    let n_bins = r.u32()? as usize;
    let n_fft = r.u32()? as usize;
    let hop = r.u32()? as usize;
    let sample_rate = r.u32()?;
    let f_min = r.f64()?;
    let f_max = r.f64()?;
    let breakpoint = r.f64()?;
    let width = r.f64()?;
    let channels = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let kernel = r.u32()? as usize;
    let dilations = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let se_reduction = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let cfg = ModelConfig {
        species,
        frontend: kind,
        n_bins,
        n_fft,
        hop,
        sample_rate,
        f_min,
        f_max,
        // The archive's breakpoint/width are the live values; a model
        // reconstructed from this config starts from them.
        init_breakpoint: breakpoint,
        init_width: width,
        channels,
        kernel,
        dilations,
        se_reduction,
        hidden,
    };
    Ok((cfg, breakpoint, width))
}

/// Serializes a model. The header records the configuration (with the
/// current filter values) and its hash; blobs follow in registry order.
pub fn save_model<F: Real>(model: &ModelParams<F>) -> Vec<u8> {
    let fb = model.filterbank_params();
    let config_section = encode_config(
        &model.config,
        fb.breakpoint.to_f64().unwrap(),
        fb.width.to_f64().unwrap(),
    );

    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    put_u32(&mut out, ARCHIVE_VERSION);
    put_u64(&mut out, config_section.len() as u64);
    out.extend_from_slice(&config_section);
    out.extend_from_slice(&Sha256::digest(&config_section));

    let infos = model.tensor_infos();
    put_u32(&mut out, infos.len() as u32);
    model.visit(&mut |info, values| {
        put_str(&mut out, &info.path);
        put_u64(&mut out, values.len() as u64);
        put_slice(&mut out, values);
    });

    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    out
}

/// Parses an archive back into a model. Fails with [`Error::Checksum`]
/// on any corruption or truncation, [`Error::Version`] on an unknown
/// format revision, and named errors when the blob inventory does not
/// match the registry implied by the stored configuration.
pub fn load_model<F: Real>(bytes: &[u8]) -> Result<ModelParams<F>> {
    if bytes.len() < 32 {
        return Err(Error::Checksum);
    }
    let (payload, stored) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(payload).as_slice() != stored {
        return Err(Error::Checksum);
    }

    let mut r = Reader::new(payload);
    if r.take(4)? != ARCHIVE_MAGIC {
        return Err(Error::archive("not a model archive (bad magic)"));
    }
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    let config_len = r.u64()? as usize;
    let config_section = r.take(config_len)?;
    let stored_hash = r.take(32)?;
    if Sha256::digest(config_section).as_slice() != stored_hash {
        return Err(Error::archive("configuration hash mismatch"));
    }
    let mut cr = Reader::new(config_section);
    let (config, breakpoint, width) = decode_config(&mut cr)?;
    if cr.remaining() != 0 {
        return Err(Error::archive("trailing bytes in configuration section"));
    }

    let mut model = ModelParams::<F>::zeros(&config)?;
    let expected = model.tensor_infos();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::archive(format!(
            "archive holds {count} tensors, registry expects {}",
            expected.len()
        )));
    }
    let mut failure: Option<Error> = None;
    model.visit_mut(&mut |info, values| {
        if failure.is_some() {
            return;
        }
        let mut run = || -> Result<()> {
            let path = r.string()?;
            if path != info.path {
                return Err(Error::archive(format!(
                    "tensor order mismatch: archive has {path:?}, registry expects {:?}",
                    info.path
                )));
            }
            let len = r.u64()? as usize;
            if len != values.len() {
                return Err(Error::shape(format!(
                    "tensor {}: archive has {len} values, model expects {}",
                    info.path,
                    values.len()
                )));
            }
            r.scalars_into(values)
        };
        failure = run().err();
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.remaining() != 0 {
        return Err(Error::archive("trailing bytes after parameter blobs"));
    }

    // The header copies of the filter values must agree with the
    // tensors themselves.
    let fb = model.filterbank_params();
    if fb.breakpoint.to_f64().unwrap() != breakpoint || fb.width.to_f64().unwrap() != width {
        return Err(Error::archive(
            "header filter values disagree with the stored tensors",
        ));
    }
    Ok(model)
}

pub fn save_model_to<F: Real>(path: &Path, model: &ModelParams<F>) -> Result<()> {
    std::fs::write(path, save_model(model))?;
    Ok(())
}

pub fn load_model_from<F: Real>(path: &Path) -> Result<ModelParams<F>> {
    load_model(&std::fs::read(path)?)
}

/// Field-by-field comparison of an archived configuration against the
/// one the caller expects, naming the first offending field.
pub fn ensure_config_matches(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    fn diff<T: std::fmt::Debug + PartialEq>(name: &str, a: &T, b: &T) -> Result<()> {
        if a == b {
            Ok(())
        } else {
            Err(Error::archive(format!(
                "config mismatch in {name}: archive has {a:?}, expected {b:?}"
            )))
        }
    }
    diff("species", &found.species, &expected.species)?;
    diff("frontend", &found.frontend.as_str(), &expected.frontend.as_str())?;
    diff("n_bins", &found.n_bins, &expected.n_bins)?;
    diff("n_fft", &found.n_fft, &expected.n_fft)?;
    diff("hop", &found.hop, &expected.hop)?;
    diff("sample_rate", &found.sample_rate, &expected.sample_rate)?;
    diff("f_min", &found.f_min, &expected.f_min)?;
    diff("f_max", &found.f_max, &expected.f_max)?;
    diff("channels", &found.channels, &expected.channels)?;
    diff("kernel", &found.kernel, &expected.kernel)?;
    diff("dilations", &found.dilations, &expected.dilations)?;
    diff("se_reduction", &found.se_reduction, &expected.se_reduction)?;
    diff("hidden", &found.hidden, &expected.hidden)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streaming::offline_logits;

    fn toy_model() -> ModelParams<f32> {
        let cfg = ModelConfig::toy(vec!["a".into(), "b".into()]);
        ModelParams::init(&cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = toy_model();
        let bytes = save_model(&model);
        let loaded: ModelParams<f32> = load_model(&bytes).unwrap();

        let mut original: Vec<(String, Vec<f32>)> = Vec::new();
        model.visit(&mut |info, t| original.push((info.path, t.to_vec())));
        let mut restored: Vec<(String, Vec<f32>)> = Vec::new();
        loaded.visit(&mut |info, t| restored.push((info.path, t.to_vec())));
        assert_eq!(original.len(), restored.len());
        for ((pa, ta), (pb, tb)) in original.iter().zip(&restored) {
            assert_eq!(pa, pb);
            assert_eq!(ta.len(), tb.len());
            for (x, y) in ta.iter().zip(tb) {
                assert_eq!(x.to_bits(), y.to_bits(), "bit drift in {pa}");
            }
        }
    }

    #[test]
    fn round_trip_preserves_forward_outputs_exactly() {
        let model = toy_model();
        let clip: Vec<f32> = (0..32_000)
            .map(|i| 0.3 * (2.0 * std::f32::consts::PI * 700.0 * i as f32 / 32_000.0).sin())
            .collect();
        let before = offline_logits(&model, &clip).unwrap();
        let loaded: ModelParams<f32> = load_model(&save_model(&model)).unwrap();
        let after = offline_logits(&loaded, &clip).unwrap();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let bytes = save_model(&toy_model());
        match load_model::<f32>(&bytes[..bytes.len() - 5]) {
            Err(Error::Checksum) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        match load_model::<f32>(&flipped) {
            Err(Error::Checksum) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
        match load_model::<f32>(&bytes[..16]) {
            Err(Error::Checksum) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
        // Recompute the trailing checksum after an intentional edit so
        // the inner validation (not the checksum) is what trips.
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        bytes
    }

    #[test]
    fn unknown_version_is_rejected_by_number() {
        let mut bytes = save_model(&toy_model());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        match load_model::<f32>(&reseal(bytes)) {
            Err(Error::Version { found: 7, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = save_model(&toy_model());
        bytes[..4].copy_from_slice(b"NOPE");
        let err = load_model::<f32>(&reseal(bytes)).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn config_mismatch_names_the_field() {
        let toy = ModelConfig::toy(vec!["a".into(), "b".into()]);
        let mut other = toy.clone();
        other.hidden = 48;
        let err = ensure_config_matches(&other, &toy).unwrap_err();
        assert!(err.to_string().contains("hidden"), "{err}");

        let mut other = toy.clone();
        other.species = vec!["x".into()];
        let err = ensure_config_matches(&other, &toy).unwrap_err();
        assert!(err.to_string().contains("species"), "{err}");

        ensure_config_matches(&toy, &toy).unwrap();
    }

    #[test]
    fn small_archive_against_large_config_is_named() {
        // A model saved from the reduced configuration cannot be
        // mistaken for the deployment one: the comparison names the
        // first structural difference.
        let small = toy_model();
        let loaded: ModelParams<f32> = load_model(&save_model(&small)).unwrap();
        let full = ModelConfig::full_default();
        let err = ensure_config_matches(&loaded.config, &full).unwrap_err();
        assert!(err.to_string().contains("config mismatch"), "{err}");
    }

    #[test]
    fn archive_restores_live_filter_values() {
        let mut model = toy_model();
        if let crate::model::FrontendWeights::Semi { breakpoint, width } = &mut model.frontend {
            *breakpoint = 9876.5;
            *width = 321.25;
        }
        let loaded: ModelParams<f32> = load_model(&save_model(&model)).unwrap();
        let fb = loaded.filterbank_params();
        assert_eq!(fb.breakpoint, 9876.5);
        assert_eq!(fb.width, 321.25);
        // The stored config also carries them as the new starting point.
        assert_eq!(loaded.config.init_breakpoint, 9876.5);
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.wmdl");
        let model = toy_model();
        save_model_to(&path, &model).unwrap();
        let loaded: ModelParams<f32> = load_model_from(&path).unwrap();
        assert_eq!(loaded.config.species, model.config.species);
    }
}
