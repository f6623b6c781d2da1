//! End-to-end tests of the `wren` binary: the full artifact pipeline
//! (prep, train, infer, stream, export, dump) plus the documented exit
//! codes for each error category.

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use wren_core::archive::load_model_from;
use wren_core::dataset::synth::white_noise;
use wren_core::dataset::{encode_wav, tone, Manifest, CLIP_SAMPLES};
use wren_core::quant::QuantizedModel;

fn wren() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wren"))
}

fn noise(len: usize, sigma: f64, seed: u64) -> Vec<f32> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    white_noise(len, sigma, &mut rng)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn wren binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr(out)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}\nstdout: {}",
        stderr(out),
        stdout(out)
    );
}

fn write_tone_wav(path: &Path, freq: f64, sample_rate: u32, seconds: f64) {
    let len = (seconds * sample_rate as f64) as usize;
    let samples: Vec<f32> = tone(freq, sample_rate, len, 0.4);
    std::fs::write(path, encode_wav(&samples, sample_rate)).unwrap();
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(wren().arg("--help"));
    assert_success(&out);
    let text = stdout(&out);
    for verb in ["prep", "train", "infer", "stream", "export", "bench", "dump-filterbank"] {
        assert!(text.contains(verb), "help is missing {verb:?}");
    }
}

#[test]
fn train_help_mirrors_every_trainer_field() {
    let out = run(wren().args(["train", "--help"]));
    assert_success(&out);
    let text = stdout(&out);
    for flag in [
        "--alpha",
        "--temperature",
        "--gamma",
        "--base-lr",
        "--weight-decay",
        "--lr-mult-breakpoint",
        "--lr-mult-width",
        "--epochs",
        "--warmup-epochs",
        "--cycle-network",
        "--cycle-filter",
        "--refine-epochs",
        "--patience",
        "--batch-size",
        "--teacher-threshold",
        "--adaptation-rate",
        "--dropout",
        "--grad-noise-std",
        "--perturb-every",
        "--perturb-frac",
        "--feedback",
        "--feedback-tolerance",
        "--augment",
        "--seed",
    ] {
        assert!(text.contains(flag), "train --help is missing {flag}");
    }
}

/// One temp workspace, the verbs chained in their natural order so each
/// step consumes the previous step's artifact.
#[test]
fn pipeline_prep_train_infer_stream_export_dump() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // --- prep ---------------------------------------------------------
    // Two species plus one ambient category, at two different native
    // sample rates to exercise resampling.
    let input = root.join("raw");
    for (sub, freq, sr, secs) in [
        ("wren/morning", 2500.0, 32_000, 8.0),
        ("owl/dusk", 600.0, 16_000, 8.0),
    ] {
        let path = input.join(format!("{sub}.wav"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        // A loud burst midway through quiet noise gives the segmenter
        // one clear activity peak per recording.
        let len = (secs * sr as f64) as usize;
        let mut samples = noise(len, 0.004, 11);
        let burst: Vec<f32> = tone(freq, sr, sr as usize / 2, 0.5);
        let at = len / 2;
        for (d, s) in samples[at..].iter_mut().zip(&burst) {
            *d += *s;
        }
        std::fs::write(path, encode_wav(&samples, sr)).unwrap();
    }
    let rain = input.join("ambient/rain/shower.wav");
    std::fs::create_dir_all(rain.parent().unwrap()).unwrap();
    std::fs::write(&rain, encode_wav(&noise(4 * 32_000, 0.02, 12), 32_000)).unwrap();

    let data = root.join("prepared");
    let out = run(wren()
        .args(["prep", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(&data));
    assert_success(&out);
    let manifest = Manifest::read(&data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.species, vec!["owl".to_string(), "wren".to_string()]);
    assert!(!manifest.records.is_empty());
    for record in &manifest.records {
        let clip = wren_core::dataset::read_wav::<f32>(&data.join(&record.clip)).unwrap();
        assert_eq!(clip.samples.len(), CLIP_SAMPLES);
        assert_eq!(clip.sample_rate, 32_000);
    }
    assert!(manifest.records.iter().any(|r| r.label == "no_bird"));

    // --- train (synthetic task keeps the runtime short) ---------------
    let model_path = root.join("model.wmdl");
    let log_path = root.join("train_log.tsv");
    let out = run(wren()
        .args([
            "train",
            "--synthetic",
            "tones-and-chirps",
            "--per-class",
            "10",
            "--clip-seconds",
            "0.25",
            "--epochs",
            "3",
            "--warmup-epochs",
            "1",
            "--refine-epochs",
            "1",
            "--batch-size",
            "8",
            "--augment",
            "false",
            "--seed",
            "7",
            "--output",
        ])
        .arg(&model_path)
        .arg("--log")
        .arg(&log_path));
    assert_success(&out);
    let text = stdout(&out);
    assert!(text.contains("best held-out accuracy"), "missing summary: {text}");
    let model = load_model_from::<f32>(&model_path).unwrap();
    assert_eq!(model.config.species.len(), 2);
    let log = std::fs::read_to_string(&log_path).unwrap();
    assert_eq!(log.lines().count(), 1 + 3, "header plus one line per epoch:\n{log}");
    assert!(log.starts_with("epoch\tphase\t"));

    // --- infer --------------------------------------------------------
    let tone_path = root.join("tone.wav");
    write_tone_wav(&tone_path, 1500.0, 32_000, 0.5);
    let out = run(wren()
        .arg("infer")
        .arg(&tone_path)
        .arg("--model")
        .arg(&model_path));
    assert_success(&out);
    let text = stdout(&out);
    // All three classes appear in the ranking with probabilities.
    for name in ["tonebird", "chirpbird", "no_bird"] {
        assert!(text.contains(name), "missing class {name} in:\n{text}");
    }

    // --- stream -------------------------------------------------------
    let out = run(wren()
        .arg("stream")
        .arg(&tone_path)
        .args(["--chunk-ms", "100", "--model"])
        .arg(&model_path));
    assert_success(&out);
    let text = stdout(&out);
    // 0.5 s in 100 ms chunks: five running rows plus the final line.
    assert_eq!(text.lines().filter(|l| l.contains(" s  ")).count(), 5, "{text}");
    assert!(text.contains("final:"), "{text}");

    // --- export -------------------------------------------------------
    let quant_path = root.join("model.wqnt");
    let out = run(wren()
        .args(["export", "--int8", "--model"])
        .arg(&model_path)
        .args([
            "--synthetic",
            "tones-and-chirps",
            "--calibration-count",
            "16",
            "--clip-seconds",
            "0.25",
            "--output",
        ])
        .arg(&quant_path));
    assert_success(&out);
    let text = stdout(&out);
    assert!(text.contains("snr_db"), "missing report header:\n{text}");
    assert!(text.contains("top-1 agreement"), "{text}");
    let quantized = QuantizedModel::read(&quant_path).unwrap();
    assert_eq!(quantized.config.species, model.config.species);

    // --- dump-filterbank ----------------------------------------------
    let out = run(wren()
        .args(["dump-filterbank", "--model"])
        .arg(&model_path));
    assert_success(&out);
    let text = stdout(&out);
    // Comment line, column header, then one row per filter.
    assert_eq!(text.lines().count(), 2 + model.config.n_bins, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("index\tx\tcenter_hz"));

    // --- bench --------------------------------------------------------
    let out = run(wren()
        .args(["bench", "--iterations", "2", "--model"])
        .arg(&model_path));
    assert_success(&out);
    let text = stdout(&out);
    assert!(text.contains("real-time factor"), "{text}");
    assert!(text.contains("total"), "{text}");
}

#[test]
fn exit_codes_distinguish_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Usage error (clap): conflicting sources.
    let out = run(wren().args([
        "train",
        "--data",
        "x",
        "--synthetic",
        "tones-and-chirps",
    ]));
    assert_exit(&out, 2);

    // Configuration error: invalid hyperparameter.
    let out = run(wren().args([
        "train",
        "--synthetic",
        "tones-and-chirps",
        "--alpha",
        "2.0",
    ]));
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("alpha"));

    // Configuration error: no training source at all.
    let out = run(wren().arg("train"));
    assert_exit(&out, 2);

    // Data error: an input directory with no recordings.
    let empty = root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(wren()
        .args(["prep", "--input"])
        .arg(&empty)
        .arg("--output")
        .arg(root.join("out")));
    assert_exit(&out, 3);

    // Model archive error: garbage bytes where a model should be.
    let bogus = root.join("bogus.wmdl");
    std::fs::write(&bogus, b"WMDLnot really a model").unwrap();
    let tone_path = root.join("tone.wav");
    write_tone_wav(&tone_path, 800.0, 32_000, 0.2);
    let out = run(wren().arg("infer").arg(&tone_path).arg("--model").arg(&bogus));
    assert_exit(&out, 4);

    // I/O error: the model file does not exist.
    let out = run(wren()
        .args(["dump-filterbank", "--model"])
        .arg(root.join("missing.wmdl")));
    assert_exit(&out, 5);
}
