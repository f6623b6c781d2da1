//! `wren train`: runs the full alternating-optimization schedule on
//! prepared clips or a built-in synthetic task.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use wren_core::archive::save_model_to;
use wren_core::dataset::{read_wav, Manifest, SoftLabels, Split, TARGET_RATE};
use wren_core::frontend::FrontendKind;
use wren_core::model::{FrontendWeights, ModelParams};
use wren_core::training::{run_schedule, EpochRecord, FilterFeedback, TrainConfig, TrainItem};
use wren_core::{Error, Result};

use crate::util::{self, Arch, SyntheticTask};

fn default_cfg() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Args)]
pub struct TrainArgs {
    /// Prepared dataset directory (output of `wren prep`)
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Train on a built-in synthetic task: tones-and-chirps|high-band
    #[arg(long, value_name = "TASK", value_parser = SyntheticTask::from_str)]
    synthetic: Option<SyntheticTask>,
    /// Clips per class when --synthetic is used
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Clip duration in seconds when --synthetic is used
    #[arg(long, default_value_t = 0.5)]
    clip_seconds: f64,
    /// Architecture preset: toy|full
    #[arg(long, default_value = "toy", value_parser = Arch::from_str)]
    arch: Arch,
    /// Filterbank kind: semi|mel|linear|full
    #[arg(long, default_value = "semi", value_parser = FrontendKind::from_str)]
    frontend: FrontendKind,
    /// Teacher probability file for distillation (requires --data)
    #[arg(long, value_name = "TSV")]
    soft_labels: Option<PathBuf>,
    /// Where the trained model archive is written
    #[arg(long, default_value = "model.wmdl")]
    output: PathBuf,
    /// Optional per-epoch TSV training log
    #[arg(long)]
    log: Option<PathBuf>,

    // Trainer hyperparameters; one flag per field, defaults identical
    // to the library defaults.
    /// Distillation mix ceiling for the adaptive blend
    #[arg(long, default_value_t = default_cfg().alpha)]
    alpha: f64,
    /// Softmax temperature for the distillation term
    #[arg(long, default_value_t = default_cfg().temperature)]
    temperature: f64,
    /// Focusing exponent of the focal term
    #[arg(long, default_value_t = default_cfg().gamma)]
    gamma: f64,
    /// Base learning rate
    #[arg(long, default_value_t = default_cfg().base_lr)]
    base_lr: f64,
    /// Decoupled weight decay on network weight matrices
    #[arg(long, default_value_t = default_cfg().weight_decay)]
    weight_decay: f64,
    /// Learning-rate multiplier for the breakpoint parameter
    #[arg(long, default_value_t = default_cfg().lr_mult_breakpoint)]
    lr_mult_breakpoint: f64,
    /// Learning-rate multiplier for the transition-width parameter
    #[arg(long, default_value_t = default_cfg().lr_mult_width)]
    lr_mult_width: f64,
    /// Total epoch budget (also the cosine-annealing horizon)
    #[arg(long, default_value_t = default_cfg().epochs)]
    epochs: usize,
    /// Leading joint-training epochs
    #[arg(long, default_value_t = default_cfg().warmup_epochs)]
    warmup_epochs: usize,
    /// Network-only epochs per alternation cycle
    #[arg(long, default_value_t = default_cfg().cycle_network)]
    cycle_network: usize,
    /// Filter-only epochs per alternation cycle
    #[arg(long, default_value_t = default_cfg().cycle_filter)]
    cycle_filter: usize,
    /// Trailing joint-refinement epochs
    #[arg(long, default_value_t = default_cfg().refine_epochs)]
    refine_epochs: usize,
    /// Early-stopping patience in epochs
    #[arg(long, default_value_t = default_cfg().patience)]
    patience: usize,
    /// Clips per optimizer step
    #[arg(long, default_value_t = default_cfg().batch_size)]
    batch_size: usize,
    /// Minimum teacher max-probability for a soft term to count
    #[arg(long, default_value_t = default_cfg().teacher_threshold)]
    teacher_threshold: f64,
    /// EMA rate of the adaptive distillation mix
    #[arg(long, default_value_t = default_cfg().adaptation_rate)]
    adaptation_rate: f64,
    /// Dropout rate on encoder outputs
    #[arg(long, default_value_t = default_cfg().dropout)]
    dropout: f64,
    /// Base std of Gaussian gradient noise in filter phases
    #[arg(long, default_value_t = default_cfg().grad_noise_std)]
    grad_noise_std: f64,
    /// Minimum epoch gap between oscillatory filter perturbations
    #[arg(long, default_value_t = default_cfg().perturb_every)]
    perturb_every: usize,
    /// Relative amplitude of the filter perturbation
    #[arg(long, default_value_t = default_cfg().perturb_frac)]
    perturb_frac: f64,
    /// Validation feedback on filter moves: reject|bound
    #[arg(long, default_value = "reject", value_parser = FilterFeedback::from_str)]
    feedback: FilterFeedback,
    /// Relative validation-accuracy drop that triggers the feedback
    #[arg(long, default_value_t = default_cfg().feedback_tolerance)]
    feedback_tolerance: f64,
    /// Waveform augmentation: true|false
    #[arg(long, action = clap::ArgAction::Set, default_value_t = default_cfg().augment)]
    augment: bool,
    /// Seed for initialization, batching, augmentation, and noise
    #[arg(long, default_value_t = default_cfg().seed)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            temperature: self.temperature,
            gamma: self.gamma,
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            lr_mult_breakpoint: self.lr_mult_breakpoint,
            lr_mult_width: self.lr_mult_width,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            cycle_network: self.cycle_network,
            cycle_filter: self.cycle_filter,
            refine_epochs: self.refine_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            teacher_threshold: self.teacher_threshold,
            adaptation_rate: self.adaptation_rate,
            dropout: self.dropout,
            grad_noise_std: self.grad_noise_std,
            perturb_every: self.perturb_every,
            perturb_frac: self.perturb_frac,
            feedback: self.feedback,
            feedback_tolerance: self.feedback_tolerance,
            augment: self.augment,
            seed: self.seed,
        }
    }
}

/// Loads a prepared dataset: species list plus train and validation
/// items, with teacher rows attached where the soft-label file has a
/// confident entry for the clip.
fn load_prepared(
    dir: &Path,
    soft_labels: Option<&Path>,
) -> Result<(Vec<String>, Vec<TrainItem<f32>>, Vec<TrainItem<f32>>)> {
    let manifest = Manifest::read(&dir.join("manifest.tsv"))?;
    let soft = soft_labels.map(SoftLabels::read).transpose()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut teachers = 0usize;
    for record in &manifest.records {
        let audio = read_wav::<f32>(&dir.join(&record.clip))?;
        if audio.sample_rate != TARGET_RATE {
            return Err(Error::data(format!(
                "{}: expected {TARGET_RATE} Hz clips, found {} Hz",
                record.clip, audio.sample_rate
            )));
        }
        let teacher = soft
            .as_ref()
            .and_then(|s| s.confident_row(&record.clip))
            .map(|row| row.iter().map(|&p| p as f32).collect::<Vec<f32>>());
        teachers += teacher.is_some() as usize;
        let item = TrainItem {
            samples: audio.samples,
            label: manifest.class_index(&record.label)?,
            teacher,
        };
        match record.split {
            Split::Train => train.push(item),
            Split::Val => val.push(item),
        }
    }
    if soft.is_some() {
        println!(
            "soft labels: {teachers} of {} clips have a confident teacher row",
            manifest.records.len()
        );
    }
    Ok((manifest.species.clone(), train, val))
}

fn print_epoch(r: &EpochRecord) {
    println!(
        "epoch {:>3} [{:<7}] loss {:<8.4} val {:.3}  b {:>6.0} Hz  w {:>7.2}  lr {:.2e}",
        r.epoch, r.phase, r.train_loss, r.val_acc, r.breakpoint, r.width, r.lr
    );
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = args.config();
    cfg.validate()?;
    if args.soft_labels.is_some() && args.data.is_none() {
        return Err(Error::config(
            "--soft-labels requires --data (teacher rows are keyed by clip path)".to_string(),
        ));
    }

    let (species, train, val) = if let Some(dir) = &args.data {
        load_prepared(dir, args.soft_labels.as_deref())?
    } else if let Some(task) = args.synthetic {
        let clip_len = util::clip_samples(args.clip_seconds, 512)?;
        let task = util::make_task(task, args.per_class, clip_len, cfg.seed);
        (task.species, task.train, task.val)
    } else {
        return Err(Error::config(
            "provide --data DIR or --synthetic TASK".to_string(),
        ));
    };

    let config = util::model_config(args.arch, species, args.frontend);
    let mut model = ModelParams::<f32>::init(&config, cfg.seed)?;
    println!(
        "{} frontend, {} classes, {} trainable parameters; {} train / {} val clips",
        config.frontend.as_str(),
        config.num_classes(),
        model.parameter_count(),
        train.len(),
        val.len()
    );

    let started = Instant::now();
    let summary = run_schedule(&mut model, &train, &val, &cfg, print_epoch)?;
    let elapsed = started.elapsed();

    if let Some(log) = &args.log {
        let mut text = String::from(EpochRecord::tsv_header());
        text.push('\n');
        for record in &summary.records {
            text.push_str(&record.to_tsv_line());
            text.push('\n');
        }
        fs::write(log, text)?;
        println!("training log written to {}", log.display());
    }

    save_model_to(&args.output, &model)?;
    println!(
        "best held-out accuracy {:.3} at epoch {}; final train accuracy {:.3}",
        summary.best_val_acc, summary.best_epoch, summary.final_train_acc
    );
    if summary.stopped_early {
        println!(
            "stopped early after {} of {} epochs (patience {})",
            summary.epochs_run, cfg.epochs, cfg.patience
        );
    }
    if let FrontendWeights::Semi { breakpoint, width } = &model.frontend {
        println!("learned breakpoint {breakpoint:.0} Hz, transition width {width:.2}");
    }
    println!(
        "model written to {} in {:.1} s",
        args.output.display(),
        elapsed.as_secs_f64()
    );
    Ok(())
}
