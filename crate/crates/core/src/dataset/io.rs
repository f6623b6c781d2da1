//! File formats used by the preprocessing pipeline: 16-bit PCM WAV
//! audio, the line-delimited clip manifest, and the soft-label table
//! produced by a teacher model.
//!
//! Audio policy: only 16-bit integer PCM is accepted. Multi-channel
//! input is collapsed to mono by averaging channels. Samples map to
//! floats as `i/32768` on read and `round(x*32768)` clamped to the
//! `i16` range on write, so a full-scale float of 1.0 saturates at
//! 32767 and everything else round-trips within half a quantization
//! step.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bytes::{put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::num::{lit, Real};

const PCM_FORMAT_TAG: u16 = 1;
const MANIFEST_HEADER: &str = "# clip-manifest";
const SOFT_LABEL_HEADER: &str = "# soft-labels";
pub const MANIFEST_VERSION: u32 = 1;
pub const SOFT_LABEL_VERSION: u32 = 1;

/// Decoded mono audio plus its native sample rate.
#[derive(Debug, Clone)]
pub struct Audio<F> {
    pub samples: Vec<F>,
    pub sample_rate: u32,
}

/// Encodes mono samples as a 16-bit PCM WAV byte stream.
pub fn encode_wav<F: Real>(samples: &[F], sample_rate: u32) -> Vec<u8> {
    let data_bytes = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_bytes);
    out.extend_from_slice(b"RIFF");
    put_u32(&mut out, (36 + data_bytes) as u32);
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    put_u32(&mut out, 16);
    put_u16(&mut out, PCM_FORMAT_TAG);
    put_u16(&mut out, 1); // mono
    put_u32(&mut out, sample_rate);
    put_u32(&mut out, sample_rate * 2); // byte rate
    put_u16(&mut out, 2); // block align
    put_u16(&mut out, 16); // bits per sample

    out.extend_from_slice(b"data");
    put_u32(&mut out, data_bytes as u32);
    for &s in samples {
        let v = (s.to_f64().unwrap_or(0.0) * 32768.0).round();
        let q = v.clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Parses a 16-bit PCM WAV byte stream, averaging channels to mono.
/// Unknown chunks are skipped (with the RIFF even-byte padding rule);
/// compressed or non-16-bit formats are rejected with a named reason.
pub fn decode_wav<F: Real>(bytes: &[u8]) -> Result<Audio<F>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != b"RIFF" {
        return Err(Error::data("not a RIFF file (missing RIFF tag)"));
    }
    let _riff_size = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::data("not a WAV file (missing WAVE tag)"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 {
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        let body = r.take(size)?;
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1)?; // chunks are padded to even length
        }
        match &id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::data("fmt chunk too small"));
                }
                let mut fr = Reader::new(body);
                let tag = fr.u16()?;
                let channels = fr.u16()?;
                let rate = fr.u32()?;
                let _byte_rate = fr.u32()?;
                let _block_align = fr.u16()?;
                let bits = fr.u16()?;
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                data = Some(body);
                break; // fmt precedes data in well-formed files
            }
            _ => {} // skip LIST, fact, cue, etc.
        }
    }

    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::data("WAV file has no fmt chunk"))?;
    let data = data.ok_or_else(|| Error::data("WAV file has no data chunk"))?;
    if tag != PCM_FORMAT_TAG {
        return Err(Error::data(format!(
            "unsupported WAV format tag {tag}: only integer PCM (tag 1) is supported"
        )));
    }
    if bits != 16 {
        return Err(Error::data(format!(
            "unsupported bit depth {bits}: only 16-bit PCM is supported"
        )));
    }
    if channels == 0 {
        return Err(Error::data("WAV file declares zero channels"));
    }

    let ch = channels as usize;
    let frames = data.len() / (2 * ch);
    let mut samples = Vec::with_capacity(frames);
    let inv = 1.0 / (32768.0 * ch as f64);
    for f in 0..frames {
        let mut acc = 0.0f64;
        for c in 0..ch {
            let off = (f * ch + c) * 2;
            let v = i16::from_le_bytes([data[off], data[off + 1]]);
            acc += v as f64;
        }
        samples.push(lit::<F>(acc * inv));
    }
    Ok(Audio {
        samples,
        sample_rate: rate,
    })
}

pub fn write_wav<F: Real>(path: &Path, samples: &[F], sample_rate: u32) -> Result<()> {
    std::fs::write(path, encode_wav(samples, sample_rate))?;
    Ok(())
}

pub fn read_wav<F: Real>(path: &Path) -> Result<Audio<F>> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes)
}

/// Which partition a clip belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::data(format!("unknown split {other:?}"))),
        }
    }
}

/// One extracted clip: where it came from, where it starts in the
/// source recording, and how it is labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    /// Identifier of the clip audio file (relative path).
    pub clip: String,
    /// Identifier of the source recording.
    pub source: String,
    /// Start sample of the clip within the processed source.
    pub start: u64,
    /// Class name (a species name or `no_bird`).
    pub label: String,
    pub split: Split,
    /// Prominence of the detected activity peak; 0 for fallback and
    /// synthesized clips.
    pub prominence: f64,
}

/// Line-delimited clip inventory with an explicit format version.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub species: Vec<String>,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(species: Vec<String>) -> Self {
        Manifest {
            species,
            records: Vec::new(),
        }
    }

    /// Class index for a label: species position, or last class for
    /// `no_bird`.
    pub fn class_index(&self, label: &str) -> Result<usize> {
        if label == "no_bird" {
            return Ok(self.species.len());
        }
        self.species
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::data(format!("label {label:?} not in species list")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MANIFEST_HEADER} v{MANIFEST_VERSION}");
        let _ = writeln!(out, "# species\t{}", self.species.join("\t"));
        out.push_str("clip\tsource\tstart\tlabel\tsplit\tprominence\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.clip,
                r.source,
                r.start,
                r.label,
                r.split.as_str(),
                r.prominence
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::data("empty manifest"))?;
        let version = parse_versioned_header(head, MANIFEST_HEADER)?;
        if version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let species_line = lines
            .next()
            .ok_or_else(|| Error::data("manifest missing species line"))?;
        let species = species_line
            .strip_prefix("# species")
            .ok_or_else(|| Error::data("manifest missing species line"))?
            .split('\t')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();

        let mut records = Vec::new();
        for line in lines {
            if line.is_empty() || line.starts_with('#') || line.starts_with("clip\t") {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::data(format!(
                    "manifest line has {} fields, expected 6: {line:?}",
                    fields.len()
                )));
            }
            records.push(ClipRecord {
                clip: fields[0].to_string(),
                source: fields[1].to_string(),
                start: fields[2]
                    .parse()
                    .map_err(|_| Error::data(format!("bad start sample {:?}", fields[2])))?,
                label: fields[3].to_string(),
                split: Split::parse(fields[4])?,
                prominence: fields[5]
                    .parse()
                    .map_err(|_| Error::data(format!("bad prominence {:?}", fields[5])))?,
            });
        }
        Ok(Manifest { species, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-clip class probability vectors exported by a teacher model.
///
/// The header records the confidence threshold below which a row is
/// treated as uninformative, so the file is self-describing: consumers
/// apply the stored threshold rather than assuming one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub threshold: f64,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl SoftLabels {
    pub fn new(threshold: f64) -> Self {
        SoftLabels {
            threshold,
            rows: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SOFT_LABEL_HEADER} v{SOFT_LABEL_VERSION}");
        let _ = writeln!(out, "# threshold\t{}", self.threshold);
        for (id, probs) in &self.rows {
            let joined = probs
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join("\t");
            let _ = writeln!(out, "{id}\t{joined}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::data("empty soft-label file"))?;
        let version = parse_versioned_header(head, SOFT_LABEL_HEADER)?;
        if version != SOFT_LABEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SOFT_LABEL_VERSION,
            });
        }
        let thr_line = lines
            .next()
            .ok_or_else(|| Error::data("soft-label file missing threshold line"))?;
        let threshold: f64 = thr_line
            .strip_prefix("# threshold\t")
            .ok_or_else(|| Error::data("soft-label file missing threshold line"))?
            .parse()
            .map_err(|_| Error::data("unparsable threshold"))?;

        let mut rows = BTreeMap::new();
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields
                .next()
                .ok_or_else(|| Error::data("empty soft-label row"))?
                .to_string();
            let probs: Vec<f64> = fields
                .map(|f| {
                    f.parse()
                        .map_err(|_| Error::data(format!("bad probability {f:?}")))
                })
                .collect::<Result<_>>()?;
            if probs.is_empty() {
                return Err(Error::data(format!("soft-label row {id:?} has no probabilities")));
            }
            rows.insert(id, probs);
        }
        Ok(SoftLabels { threshold, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Teacher vector for a clip, or `None` when the row is missing or
    /// its peak probability sits below the stored threshold.
    pub fn confident_row(&self, id: &str) -> Option<&[f64]> {
        let row = self.rows.get(id)?;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max < self.threshold {
            None
        } else {
            Some(row.as_slice())
        }
    }
}

fn parse_versioned_header(line: &str, expected_tag: &str) -> Result<u32> {
    let rest = line
        .strip_prefix(expected_tag)
        .ok_or_else(|| Error::data(format!("bad header line {line:?}")))?;
    let rest = rest.trim();
    let digits = rest
        .strip_prefix('v')
        .ok_or_else(|| Error::data(format!("header missing version: {line:?}")))?;
    digits
        .parse()
        .map_err(|_| Error::data(format!("unparsable version in header {line:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_lossless_to_quantization() {
        let sr = 32_000;
        let samples: Vec<f64> = (0..2000)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin())
            .collect();
        let bytes = encode_wav(&samples, sr);
        let audio: Audio<f64> = decode_wav(&bytes).unwrap();
        assert_eq!(audio.sample_rate, sr);
        assert_eq!(audio.samples.len(), samples.len());
        for (a, b) in audio.samples.iter().zip(&samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn wav_full_scale_clamps_instead_of_wrapping() {
        let bytes = encode_wav(&[1.0f64, -1.0, 2.0, -2.0], 8000);
        let audio: Audio<f64> = decode_wav(&bytes).unwrap();
        assert!((audio.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((audio.samples[1] + 1.0).abs() < 1e-12);
        assert_eq!(audio.samples[2], audio.samples[0]);
        assert!((audio.samples[3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stereo_collapses_to_channel_mean() {
        // Hand-build a two-channel file: L = 0.5, R = -0.25 throughout.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        put_u32(&mut bytes, 36 + 16);
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        put_u32(&mut bytes, 16);
        put_u16(&mut bytes, 1);
        put_u16(&mut bytes, 2);
        put_u32(&mut bytes, 16_000);
        put_u32(&mut bytes, 64_000);
        put_u16(&mut bytes, 4);
        put_u16(&mut bytes, 16);
        bytes.extend_from_slice(b"data");
        put_u32(&mut bytes, 16);
        for _ in 0..4 {
            bytes.extend_from_slice(&16384i16.to_le_bytes());
            bytes.extend_from_slice(&(-8192i16).to_le_bytes());
        }
        let audio: Audio<f64> = decode_wav(&bytes).unwrap();
        assert_eq!(audio.samples.len(), 4);
        for &s in &audio.samples {
            assert!((s - (0.5 - 0.25) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let samples = [0.25f64; 8];
        let canonical = encode_wav(&samples, 8000);
        // Splice a LIST chunk of odd length between fmt and data.
        let mut bytes = canonical[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        put_u32(&mut bytes, 3);
        bytes.extend_from_slice(b"abc\0"); // 3 bytes + pad
        bytes.extend_from_slice(&canonical[36..]);
        let audio: Audio<f64> = decode_wav(&bytes).unwrap();
        assert_eq!(audio.samples.len(), 8);
    }

    #[test]
    fn non_pcm_and_wrong_depth_are_rejected_by_name() {
        let mut bytes = encode_wav(&[0.0f64; 4], 8000);
        bytes[20] = 3; // IEEE float tag
        let err = decode_wav::<f64>(&bytes).unwrap_err();
        assert!(err.to_string().contains("format tag 3"), "{err}");

        let mut bytes = encode_wav(&[0.0f64; 4], 8000);
        bytes[34] = 24; // bits per sample
        let err = decode_wav::<f64>(&bytes).unwrap_err();
        assert!(err.to_string().contains("bit depth 24"), "{err}");
    }

    #[test]
    fn truncated_wav_is_an_error() {
        let bytes = encode_wav(&[0.1f64; 100], 8000);
        assert!(decode_wav::<f64>(&bytes[..40]).is_err());
    }

    fn sample_manifest() -> Manifest {
        let mut m = Manifest::new(vec!["wren".into(), "owl".into()]);
        m.records.push(ClipRecord {
            clip: "clips/r1_0.wav".into(),
            source: "raw/r1.wav".into(),
            start: 272_000,
            label: "wren".into(),
            split: Split::Train,
            prominence: 0.125,
        });
        m.records.push(ClipRecord {
            clip: "clips/r2_0.wav".into(),
            source: "raw/r2.wav".into(),
            start: 0,
            label: "no_bird".into(),
            split: Split::Val,
            prominence: 0.0,
        });
        m
    }

    #[test]
    fn manifest_round_trip() {
        let m = sample_manifest();
        let parsed = Manifest::parse(&m.to_text()).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.class_index("wren").unwrap(), 0);
        assert_eq!(parsed.class_index("no_bird").unwrap(), 2);
        assert!(parsed.class_index("sparrow").is_err());
    }

    #[test]
    fn manifest_version_line_is_enforced() {
        let m = sample_manifest();
        let text = m.to_text().replacen("v1", "v9", 1);
        match Manifest::parse(&text) {
            Err(Error::Version { found: 9, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
        assert!(Manifest::parse("garbage\n").is_err());
    }

    #[test]
    fn soft_labels_round_trip_and_threshold() {
        let mut sl = SoftLabels::new(0.05);
        sl.rows.insert("clip_a".into(), vec![0.9, 0.05, 0.05]);
        sl.rows.insert("clip_b".into(), vec![0.01, 0.01, 0.01]);
        let parsed = SoftLabels::parse(&sl.to_text()).unwrap();
        assert_eq!(parsed, sl);
        assert!(parsed.confident_row("clip_a").is_some());
        // Peak probability below the stored threshold: uninformative.
        assert!(parsed.confident_row("clip_b").is_none());
        assert!(parsed.confident_row("missing").is_none());
    }

    #[test]
    fn soft_labels_reject_bad_rows() {
        assert!(SoftLabels::parse("# soft-labels v1\n# threshold\t0.05\nid\n").is_err());
        assert!(SoftLabels::parse("# soft-labels v1\n# threshold\t0.05\nid\tx\n").is_err());
        match SoftLabels::parse("# soft-labels v2\n# threshold\t0.05\n") {
            Err(Error::Version { found: 2, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn wav_files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..64).map(|i| (i as f32 / 64.0) - 0.5).collect();
        write_wav(&path, &samples, 32_000).unwrap();
        let audio: Audio<f32> = read_wav(&path).unwrap();
        assert_eq!(audio.sample_rate, 32_000);
        assert_eq!(audio.samples.len(), 64);
    }
}
