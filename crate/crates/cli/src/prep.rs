//! `wren prep`: raw recordings in, fixed-length labeled clips out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use wren_core::dataset::{
    prepare_recordings, read_wav, write_wav, AmbientRecording, Recording, Split, TARGET_RATE,
};
use wren_core::{Error, Result};

#[derive(Args)]
pub struct PrepArgs {
    /// Input directory: `<input>/<species>/*.wav` recordings plus
    /// optional `<input>/ambient/<category>/*.wav` scene audio
    #[arg(long)]
    input: PathBuf,
    /// Output directory; receives `clips/` and `manifest.tsv`
    #[arg(long)]
    output: PathBuf,
    /// Ambient category excluded from the no_bird class (repeatable)
    #[arg(long = "exclude", value_name = "CATEGORY")]
    exclude: Vec<String>,
}

/// Sorted `*.wav` paths directly under `dir`.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::data(format!("unusable directory name {}", path.display())))
}

pub fn run(args: &PrepArgs) -> Result<()> {
    let mut species: Vec<String> = Vec::new();
    let mut recordings: Vec<Recording<f32>> = Vec::new();
    let mut ambient: Vec<AmbientRecording<f32>> = Vec::new();

    for dir in sorted_subdirs(&args.input)? {
        let name = dir_name(&dir)?;
        if name == "ambient" {
            for cat_dir in sorted_subdirs(&dir)? {
                let category = dir_name(&cat_dir)?;
                for wav in wav_files(&cat_dir)? {
                    let audio = read_wav::<f32>(&wav)?;
                    ambient.push(AmbientRecording {
                        category: category.clone(),
                        samples: audio.samples,
                        sample_rate: audio.sample_rate,
                    });
                }
            }
        } else {
            species.push(name.clone());
            for wav in wav_files(&dir)? {
                let stem = wav
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::data(format!("unusable file name {}", wav.display())))?;
                let audio = read_wav::<f32>(&wav)?;
                recordings.push(Recording {
                    id: format!("{name}/{stem}"),
                    label: name.clone(),
                    samples: audio.samples,
                    sample_rate: audio.sample_rate,
                });
            }
        }
    }

    if recordings.is_empty() {
        return Err(Error::data(format!(
            "no WAV recordings found under {} (expected <species>/*.wav)",
            args.input.display()
        )));
    }

    let excluded: Vec<&str> = args.exclude.iter().map(String::as_str).collect();
    let (manifest, clips) = prepare_recordings(&recordings, &ambient, &excluded, &species)?;

    for clip in &clips {
        let path = args.output.join(&clip.record.clip);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_wav(&path, &clip.samples, TARGET_RATE)?;
    }
    let manifest_path = args.output.join("manifest.tsv");
    manifest.write(&manifest_path)?;

    let mut per_label: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for record in &manifest.records {
        let counts = per_label.entry(record.label.as_str()).or_default();
        match record.split {
            Split::Train => counts.0 += 1,
            Split::Val => counts.1 += 1,
        }
    }
    println!(
        "prepared {} clips from {} recordings ({} ambient scenes)",
        clips.len(),
        recordings.len(),
        ambient.len()
    );
    println!("label                    train    val");
    for (label, (train, val)) in &per_label {
        println!("{label:<24} {train:>5} {val:>6}");
    }
    println!("manifest: {}", manifest_path.display());
    Ok(())
}
