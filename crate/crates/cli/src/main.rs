//! Batch command-line front end: dataset synthesis, training, evaluation,
//! the loss ablation harness, and the gradient self-check.
//!
//! Exit codes: 0 success, 2 for configuration or usage errors, 1 for
//! runtime failures (missing files, corrupt inputs, diverged training).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixsup_core::checks;
use mixsup_core::data::{
    derive_weak_dataset, load_folder_dataset, save_dataset, synth_blob_dataset, LabeledSample,
    SupervisionKind,
};
use mixsup_core::grid::bilinear_resize3;
use mixsup_core::metrics::{emit_report, evaluate, MetricsReport};
use mixsup_core::model::{load_checkpoint, Model, INPUT_SIZE_DIVISOR};
use mixsup_core::trainer::{train, TrainConfig};
use mixsup_core::{Error, ImageTensor, Result};

/// Keeps the held-out synthetic test split disjoint from the train split
/// for any --seed.
const TEST_SPLIT_SALT: u64 = 0x7465_7374;

#[derive(Parser)]
#[command(name = "mixsup", version, about = "Mixed-supervision segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a blob corpus or derive weak labels from a dense one
    Synth(SynthArgs),
    /// Train the segmentation model on mixed-kind datasets
    Train(TrainArgs),
    /// Score a checkpoint on dense-labeled test sets
    Eval(EvalArgs),
    /// Train the three loss configurations over shared seeds
    Ablate(AblateArgs),
    /// Verify analytic gradients and projection properties
    LossCheck(LossCheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Dense-labeled source folder (images/ plus masks/)
    #[arg(long = "in", value_name = "DIR", required_unless_present = "generate")]
    input: Option<PathBuf>,
    /// Generate this many synthetic blob samples instead of reading --in
    #[arg(long, value_name = "COUNT", conflicts_with = "input")]
    generate: Option<usize>,
    /// Height of generated samples
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Width of generated samples
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Annotation kind to emit: pixel, polygon, box, scribble, or point
    #[arg(long)]
    kind: String,
    /// Output dataset folder
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// key = value training config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset folder per kind, e.g. --data box=/corpora/boxes (repeatable)
    #[arg(long = "data", value_name = "KIND=DIR")]
    data: Vec<String>,
    /// Dense-labeled folder for periodic validation Dice
    #[arg(long)]
    val: Option<PathBuf>,
    /// Train on the built-in synthetic corpus (the default without --data)
    #[arg(long)]
    synthetic: bool,
    /// Synthetic train corpus size, split evenly over the five kinds
    #[arg(long, default_value_t = 500)]
    synth_train: usize,
    /// Synthetic held-out corpus size
    #[arg(long, default_value_t = 100)]
    synth_test: usize,
    /// Output directory for checkpoint, history, and plots
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Named dense-labeled test folder, e.g. --data Kvasir=/sets/kvasir (repeatable)
    #[arg(long = "data", value_name = "NAME=DIR")]
    data: Vec<String>,
    /// Score on the built-in synthetic test corpus (the default without --data)
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 100)]
    synth_test: usize,
    /// Seed of the synthetic corpus (match the training --seed)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Binarization threshold in (0,1)
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output directory for report files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// key = value training config file shared by every run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds per configuration
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 500)]
    synth_train: usize,
    #[arg(long, default_value_t = 100)]
    synth_test: usize,
    /// Output directory for the summary CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossCheckArgs {
    /// Random inputs per gradient check
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt this gradient on purpose; the run must then fail
    #[arg(long = "inject-fault", value_name = "LOSS")]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::LossCheck(args) => cmd_loss_check(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn require_dataset_dir(root: &Path) -> Result<()> {
    if !root.join("images").is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} has no images/ directory", root.display()),
        )));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    let kind = SupervisionKind::parse(&args.kind)?;
    let dense = match (args.generate, &args.input) {
        (Some(n), _) => {
            if n == 0 {
                return Err(Error::InvalidConfig("--generate needs a count > 0".into()));
            }
            synth_blob_dataset(n, args.height, args.width, args.seed)?
        }
        (None, Some(dir)) => {
            require_dataset_dir(dir)?;
            load_folder_dataset(dir, SupervisionKind::Pixel)?
        }
        (None, None) => unreachable!("clap enforces a source"),
    };
    let samples = match kind {
        SupervisionKind::Pixel => dense,
        weak => derive_weak_dataset(&dense, weak, args.seed)?,
    };
    save_dataset(&args.out, &samples)?;
    println!(
        "wrote {} {kind}-kind samples to {}",
        samples.len(),
        args.out.display()
    );
    Ok(0)
}

fn load_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_kv_text(&std::fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

/// Splits a seeded blob corpus evenly across the five kinds and derives the
/// matching weak annotation for each split.
fn synthetic_pool(
    seed: u64,
    train_count: usize,
) -> Result<Vec<(SupervisionKind, Vec<LabeledSample>)>> {
    let dense = synth_blob_dataset(train_count, 64, 64, seed)?;
    let per = (train_count / SupervisionKind::ALL.len()).max(1);
    let mut pool = Vec::new();
    for (i, kind) in SupervisionKind::ALL.iter().enumerate() {
        let lo = (i * per).min(dense.len());
        let hi = if i + 1 == SupervisionKind::ALL.len() {
            dense.len()
        } else {
            ((i + 1) * per).min(dense.len())
        };
        if lo == hi {
            return Err(Error::InvalidConfig(format!(
                "synthetic corpus of {train_count} is too small for 5 kinds"
            )));
        }
        pool.push((*kind, derive_weak_dataset(&dense[lo..hi], *kind, seed)?));
    }
    Ok(pool)
}

fn synthetic_test_set(seed: u64, count: usize) -> Result<Vec<LabeledSample>> {
    synth_blob_dataset(count, 64, 64, seed ^ TEST_SPLIT_SALT)
}

fn parse_pairs(pairs: &[String], what: &str) -> Result<Vec<(String, PathBuf)>> {
    pairs
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("--data expects {what}=DIR, got {p:?}"))
                })
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let config = load_config(args.config.as_ref())?;

    let (pool, val_samples) = if args.data.is_empty() {
        let pool = synthetic_pool(config.seed, args.synth_train)?;
        let val = synthetic_test_set(config.seed, args.synth_test)?;
        (pool, Some(val))
    } else {
        let mut pool = Vec::new();
        for (kind_str, dir) in parse_pairs(&args.data, "KIND")? {
            let kind = SupervisionKind::parse(&kind_str)?;
            require_dataset_dir(&dir)?;
            pool.push((kind, load_folder_dataset(&dir, kind)?));
        }
        let val = match &args.val {
            Some(dir) => {
                require_dataset_dir(dir)?;
                Some(load_folder_dataset(dir, SupervisionKind::Pixel)?)
            }
            None if args.synthetic => Some(synthetic_test_set(config.seed, args.synth_test)?),
            None => None,
        };
        (pool, val)
    };

    let resume = args.resume.as_deref().map(read_checkpoint).transpose()?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.ckpt");
    let history_path = args.out.join("history.csv");

    let (_, history) = train(
        &config,
        &pool,
        val_samples.as_deref(),
        resume.as_ref(),
        Some(&ckpt_path),
    )?;

    let appending = resume.is_some() && history_path.exists();
    if appending {
        let mut csv = history.to_csv();
        csv = csv.splitn(2, '\n').nth(1).unwrap_or("").to_string();
        let existing = std::fs::read_to_string(&history_path)?;
        std::fs::write(&history_path, existing + &csv)?;
    } else {
        history.write_csv(&history_path)?;
    }
    mixsup_core::plots::training_curve(&args.out.join("training_curve.png"), &history)?;

    let val_note = history
        .rows
        .iter()
        .rev()
        .find_map(|r| r.val_dice)
        .map(|d| format!(", final val dice {d:.4}"))
        .unwrap_or_default();
    println!(
        "trained to step {} ({} steps this run){val_note}; checkpoint at {}",
        history.rows.last().map(|r| r.step).unwrap_or(0),
        history.rows.len(),
        ckpt_path.display()
    );
    Ok(0)
}

/// Forward pass that tolerates arbitrary input sizes by resizing the image
/// to the nearest model-compatible grid; the evaluator rescales the
/// prediction back to native resolution.
fn predict_any_size(
    model: &Model,
    image: &ImageTensor,
) -> Result<mixsup_core::losses::PredictionMap> {
    let (h, w) = (image.height(), image.width());
    let round_up = |n: usize| n.div_ceil(INPUT_SIZE_DIVISOR) * INPUT_SIZE_DIVISOR;
    if h % INPUT_SIZE_DIVISOR == 0 && w % INPUT_SIZE_DIVISOR == 0 {
        model.forward(image)
    } else {
        let resized = ImageTensor::new(bilinear_resize3(
            &image.data,
            round_up(h).max(INPUT_SIZE_DIVISOR),
            round_up(w).max(INPUT_SIZE_DIVISOR),
        ));
        model.forward(&resized)
    }
}

fn read_checkpoint(path: &Path) -> Result<mixsup_core::model::Checkpoint> {
    load_checkpoint(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn evaluate_checkpoint(
    checkpoint: &Path,
    test_sets: &[(String, Vec<LabeledSample>)],
    threshold: f64,
) -> Result<MetricsReport> {
    let ckpt = read_checkpoint(checkpoint)?;
    let model = Model::from_checkpoint(&ckpt)?;
    evaluate(|img| predict_any_size(&model, img), test_sets, threshold)
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be in (0,1), got {}",
            args.threshold
        )));
    }
    let test_sets: Vec<(String, Vec<LabeledSample>)> = if args.data.is_empty() {
        vec![(
            "synthetic".to_string(),
            synthetic_test_set(args.seed, args.synth_test)?,
        )]
    } else {
        let mut sets = Vec::new();
        for (name, dir) in parse_pairs(&args.data, "NAME")? {
            require_dataset_dir(&dir)?;
            sets.push((name, load_folder_dataset(&dir, SupervisionKind::Pixel)?));
        }
        sets
    };
    let report = evaluate_checkpoint(&args.checkpoint, &test_sets, args.threshold)?;
    emit_report(&report, &args.out, None)?;
    println!(
        "wavg dice {:.4}, wavg iou {:.4} over {} datasets; report in {}",
        report.wavg.dice,
        report.wavg.iou,
        report.datasets.len(),
        args.out.display()
    );
    Ok(0)
}

struct AblationArm {
    name: &'static str,
    uncertain: bool,
    consistency: bool,
}

const ABLATION_ARMS: [AblationArm; 3] = [
    AblationArm {
        name: "base",
        uncertain: false,
        consistency: false,
    },
    AblationArm {
        name: "+uncertain",
        uncertain: true,
        consistency: false,
    },
    AblationArm {
        name: "+uncertain+consistency",
        uncertain: true,
        consistency: true,
    },
];

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_ablate(args: AblateArgs) -> Result<u8> {
    if args.seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be > 0".into()));
    }
    let base = load_config(args.config.as_ref())?;
    std::fs::create_dir_all(&args.out)?;

    let mut runs_csv = String::from("config,seed,dice,iou\n");
    let mut summary_csv = String::from("BCE,Uncertain,Consistency,Dice,IoU\n");
    for arm in &ABLATION_ARMS {
        let mut dices = Vec::new();
        let mut ious = Vec::new();
        for seed in 0..args.seeds {
            let config = TrainConfig {
                seed,
                lambda_u: if arm.uncertain { base.lambda_u.max(f64::MIN_POSITIVE) } else { 0.0 },
                point_consistency: arm.consistency,
                ..base.clone()
            };
            let pool = synthetic_pool(seed, args.synth_train)?;
            let test = synthetic_test_set(seed, args.synth_test)?;
            let (model, _) = train(&config, &pool, None, None, None)?;
            let report = evaluate(
                |img| predict_any_size(&model, img),
                &[("synthetic".to_string(), test)],
                0.5,
            )?;
            println!(
                "{} seed {seed}: dice {:.4}, iou {:.4}",
                arm.name, report.wavg.dice, report.wavg.iou
            );
            runs_csv.push_str(&format!(
                "{},{seed},{},{}\n",
                arm.name, report.wavg.dice, report.wavg.iou
            ));
            dices.push(report.wavg.dice);
            ious.push(report.wavg.iou);
        }
        let (dm, ds) = mean_std(&dices);
        let (im, is) = mean_std(&ious);
        let flag = |on: bool| if on { "yes" } else { "no" };
        summary_csv.push_str(&format!(
            "yes,{},{},{:.2}±{:.2},{:.2}±{:.2}\n",
            flag(arm.uncertain),
            flag(arm.consistency),
            100.0 * dm,
            100.0 * ds,
            100.0 * im,
            100.0 * is
        ));
    }
    std::fs::write(args.out.join("ablation.csv"), &summary_csv)?;
    std::fs::write(args.out.join("ablation_runs.csv"), &runs_csv)?;
    println!("ablation summary:\n{summary_csv}");
    Ok(0)
}

fn cmd_loss_check(args: LossCheckArgs) -> Result<u8> {
    if args.trials == 0 {
        return Err(Error::InvalidConfig("--trials must be > 0".into()));
    }
    let reports = checks::run_all(args.trials, args.seed, args.inject_fault.as_deref())?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{} {:<24} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        if !r.passed {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", reports.len());
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(1)
    }
}
