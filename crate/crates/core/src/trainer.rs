//! The mixed-supervision training loop.
//!
//! Each step draws a single-kind batch from the sampler, resizes it to a
//! randomly chosen square size, routes it to that kind's loss, and applies
//! one SGD-with-momentum update. Point batches run a second forward pass on
//! the quarter-rotated images so the consistency term can compare both
//! predictions in the original frame.
//!
//! Given the same config and seed, a run is bit-for-bit reproducible, and a
//! run resumed from a checkpoint continues the exact step sequence of an
//! uninterrupted one.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    resize_sample, Annotation, LabeledSample, MixedSampler, SamplerMode, SupervisionKind,
};
use crate::error::{Error, Result};
use crate::losses::{
    self, LossBreakdown, PredictionMap,
};
use crate::metrics;
use crate::grid::{rotate90, rotate90_image};
use crate::model::{
    self, grads_from_flat, grads_to_flat, Checkpoint, Model, ModelConfig, ModelGrads,
};
use crate::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `lr * (1 - step/total)^0.9`
    Poly,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub size_set: Vec<usize>,
    pub seed: u64,
    pub lambda_u: f64,
    pub lambda_p: f64,
    pub point_bce: bool,
    pub point_consistency: bool,
    pub checkpoint_interval: u64,
    pub val_interval: u64,
    pub lr_schedule: LrSchedule,
    pub grad_clip: Option<f64>,
    pub sampler_mode: SamplerMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 4,
            iterations: 2000,
            size_set: vec![64, 80, 96],
            seed: 0,
            lambda_u: 1.0,
            lambda_p: 1.0,
            point_bce: true,
            point_consistency: true,
            checkpoint_interval: 500,
            val_interval: 200,
            lr_schedule: LrSchedule::Constant,
            grad_clip: None,
            sampler_mode: SamplerMode::RoundRobin,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0,1)".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.size_set.is_empty() {
            return Err(Error::InvalidConfig("size_set must not be empty".into()));
        }
        for &s in &self.size_set {
            if s == 0 || s % model::INPUT_SIZE_DIVISOR != 0 {
                return Err(Error::InvalidConfig(format!(
                    "size {s} is not a positive multiple of {}",
                    model::INPUT_SIZE_DIVISOR
                )));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Poly => {
                let progress = step as f64 / self.iterations as f64;
                self.learning_rate * (1.0 - progress).max(0.0).powf(0.9)
            }
        }
    }

    /// Parses a `key = value` config file (one pair per line, `#` comments).
    /// Unspecified keys keep their defaults; unknown keys are rejected.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::InvalidConfig(format!("line {}: bad {what} value {value:?}", lineno + 1))
            };
            match key {
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad(key))?,
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad(key))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
                "iterations" => cfg.iterations = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "lambda_u" => cfg.lambda_u = value.parse().map_err(|_| bad(key))?,
                "lambda_p" => cfg.lambda_p = value.parse().map_err(|_| bad(key))?,
                "point_bce" => cfg.point_bce = value.parse().map_err(|_| bad(key))?,
                "point_consistency" => {
                    cfg.point_consistency = value.parse().map_err(|_| bad(key))?
                }
                "checkpoint_interval" => {
                    cfg.checkpoint_interval = value.parse().map_err(|_| bad(key))?
                }
                "val_interval" => cfg.val_interval = value.parse().map_err(|_| bad(key))?,
                "size_set" => {
                    cfg.size_set = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(key))?;
                }
                "lr_schedule" => {
                    cfg.lr_schedule = match value {
                        "constant" => LrSchedule::Constant,
                        "poly" => LrSchedule::Poly,
                        _ => return Err(bad(key)),
                    }
                }
                "grad_clip" => {
                    cfg.grad_clip = match value {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| bad(key))?),
                    }
                }
                "sampler_mode" => {
                    cfg.sampler_mode = match value {
                        "round_robin" => SamplerMode::RoundRobin,
                        "proportional" => SamplerMode::Proportional,
                        _ => return Err(bad(key)),
                    }
                }
                "in_channels" => cfg.model.in_channels = value.parse().map_err(|_| bad(key))?,
                "fusion_channels" => {
                    cfg.model.fusion_channels = value.parse().map_err(|_| bad(key))?
                }
                "stage_channels" => {
                    let parts: Vec<usize> = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(key))?;
                    cfg.model.stage_channels = parts
                        .try_into()
                        .map_err(|_| Error::InvalidConfig("need 4 stage_channels".into()))?;
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown config key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub kind: SupervisionKind,
    pub losses: LossBreakdown,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,kind,l_pixel,l_polygon,l_box,l_scribble,l_points,l_total,val_dice\n");
        for row in &self.rows {
            let l = &row.losses;
            let val = row
                .val_dice
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.step,
                row.kind,
                l.pixel,
                l.polygon,
                l.boxes,
                l.scribble,
                l.points,
                l.total(),
                val
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Runs both forward passes of the point branch through `forward` and maps
/// the rotated prediction back to the original frame, so any
/// shape-preserving predictor can be checked for zero spatial offset.
pub fn rotated_pair<F>(mut forward: F, image: &ImageTensor) -> Result<(PredictionMap, PredictionMap)>
where
    F: FnMut(&ImageTensor) -> Result<PredictionMap>,
{
    let original = forward(image)?;
    let rotated_input = rotate90_image(image, 1);
    let rotated = forward(&rotated_input)?;
    Ok((original, rotated.rotated(3)))
}

fn scale_grads(grads: &mut ModelGrads, factor: f64) {
    for g in grads.iter_mut() {
        g.weight.mapv_inplace(|v| v * factor);
        g.bias.mapv_inplace(|v| v * factor);
    }
}

fn grad_norm(grads: &ModelGrads) -> f64 {
    grads
        .iter()
        .map(|g| {
            g.weight.iter().map(|v| v * v).sum::<f64>()
                + g.bias.iter().map(|v| v * v).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Computes the batch-mean loss for one single-kind batch together with the
/// parameter gradients, without touching the model.
pub fn compute_batch_grads(
    model: &Model,
    batch: &[&LabeledSample],
    kind: SupervisionKind,
    config: &TrainConfig,
) -> Result<(LossBreakdown, ModelGrads)> {
    let mut grads = model.zero_grads();
    let mut loss_sum = 0.0;
    let lambda_p = if config.point_bce { config.lambda_p } else { 0.0 };

    for sample in batch {
        match (kind, &sample.annotation) {
            (SupervisionKind::Pixel | SupervisionKind::Polygon, Annotation::Dense(mask)) => {
                let (pred, trace) = model.forward_traced(&sample.image)?;
                let (loss, grad) = losses::dense_with_grad(&pred, mask)?;
                model.backward(&trace, &grad, &mut grads);
                loss_sum += loss;
            }
            (SupervisionKind::Box, Annotation::Box(label)) => {
                let (pred, trace) = model.forward_traced(&sample.image)?;
                let (loss, grad) = losses::box_with_grad(&pred, label)?;
                model.backward(&trace, &grad, &mut grads);
                loss_sum += loss;
            }
            (SupervisionKind::Scribble, Annotation::Scribble(scribble)) => {
                let (pred, trace) = model.forward_traced(&sample.image)?;
                let (loss, grad) = losses::scribble_with_grad(&pred, scribble, config.lambda_u)?;
                model.backward(&trace, &grad, &mut grads);
                loss_sum += loss;
            }
            (SupervisionKind::Point, Annotation::Points(points)) => {
                let (pred, trace) = model.forward_traced(&sample.image)?;
                if config.point_consistency {
                    let rotated_input = rotate90_image(&sample.image, 1);
                    let (pred_rot, trace_rot) = model.forward_traced(&rotated_input)?;
                    let back = pred_rot.rotated(3);
                    let (loss, grad_a, grad_back) =
                        losses::point_with_grad(&pred, &back, points, lambda_p)?;
                    model.backward(&trace, &grad_a, &mut grads);
                    // The second gradient lives in the original frame; undo
                    // the rotate-back before walking the rotated branch.
                    let grad_rot = rotate90(&grad_back, 1);
                    model.backward(&trace_rot, &grad_rot, &mut grads);
                    loss_sum += loss;
                } else {
                    let (loss, grad) = losses::point_bce_with_grad(&pred, points)?;
                    model.backward(&trace, &(grad * lambda_p), &mut grads);
                    loss_sum += lambda_p * loss;
                }
            }
            _ => {
                return Err(Error::InvalidLabel(format!(
                    "sample {} does not match batch kind {kind}",
                    sample.name
                )))
            }
        }
    }

    let mean = loss_sum / batch.len() as f64;
    scale_grads(&mut grads, 1.0 / batch.len() as f64);

    let mut breakdown = LossBreakdown::default();
    match kind {
        SupervisionKind::Pixel => breakdown.pixel = mean,
        SupervisionKind::Polygon => breakdown.polygon = mean,
        SupervisionKind::Box => breakdown.boxes = mean,
        SupervisionKind::Scribble => breakdown.scribble = mean,
        SupervisionKind::Point => breakdown.points = mean,
    }
    Ok((breakdown, grads))
}

/// Mutable optimization state threaded through the step loop.
pub struct TrainState {
    pub model: Model,
    velocity: ModelGrads,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        let model = Model::new(config.model, config.seed)?;
        let velocity = model.zero_grads();
        Ok(Self {
            model,
            velocity,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(ckpt)?;
        let velocity = match &ckpt.momentum {
            Some(flat) => grads_from_flat(&model.zero_grads(), flat)?,
            None => model.zero_grads(),
        };
        Ok(Self {
            model,
            velocity,
            step: ckpt.iteration,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: *self.model.config(),
            iteration: self.step,
            params: self.model.flat_params(),
            momentum: Some(grads_to_flat(&self.velocity)),
        }
    }
}

/// One optimizer step on one batch. `lr` is the already-scheduled rate for
/// this step (0 leaves the parameters untouched but still logs the loss).
pub fn train_step(
    state: &mut TrainState,
    batch: &[&LabeledSample],
    kind: SupervisionKind,
    config: &TrainConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    let (breakdown, mut grads) = compute_batch_grads(&state.model, batch, kind, config)?;
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            kind: kind.to_string(),
        });
    }
    if let Some(limit) = config.grad_clip {
        let norm = grad_norm(&grads);
        if norm > limit {
            scale_grads(&mut grads, limit / norm);
        }
    }
    state
        .model
        .sgd_step(&grads, &mut state.velocity, lr, config.momentum);
    state.step += 1;
    Ok(breakdown)
}

fn validation_dice(model: &Model, val: &[LabeledSample]) -> Result<f64> {
    let mut total = 0.0;
    for sample in val {
        let Annotation::Dense(gt) = &sample.annotation else {
            return Err(Error::InvalidLabel(format!(
                "validation sample {} must carry a dense mask",
                sample.name
            )));
        };
        let pred = model.forward(&sample.image)?;
        let mask = metrics::binarize(&pred, 0.5);
        total += metrics::dice_coeff(&mask, gt)?;
    }
    Ok(total / val.len() as f64)
}

/// Runs (or resumes) training: `config.iterations` total steps over the
/// mixed pool, periodic validation Dice on `val_set`, checkpoints at the
/// configured cadence and at the end (when `checkpoint_path` is given).
/// Returns the trained model and the history rows this call produced.
pub fn train(
    config: &TrainConfig,
    datasets: &[(SupervisionKind, Vec<LabeledSample>)],
    val_set: Option<&[LabeledSample]>,
    resume: Option<&Checkpoint>,
    checkpoint_path: Option<&Path>,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    let mut state = match resume {
        Some(ckpt) => TrainState::from_checkpoint(ckpt)?,
        None => TrainState::fresh(config)?,
    };
    let mut sampler = MixedSampler::new(datasets, config.batch_size, config.seed, config.sampler_mode)?;
    sampler.set_step(state.step);

    let mut history = TrainHistory::default();
    while state.step < config.iterations {
        let step = state.step;
        let (kind, batch) = sampler.next_batch();

        // Per-step RNG keyed by (seed, step): the resize draw is independent
        // of execution history, so resumed runs see identical sizes.
        let mut step_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7265_7369_7a65);
        step_rng.set_stream(step);
        let size = config.size_set[rand::Rng::gen_range(&mut step_rng, 0..config.size_set.len())];
        let resized: Vec<LabeledSample> = batch
            .iter()
            .map(|s| resize_sample(s, size))
            .collect::<Result<_>>()?;
        let refs: Vec<&LabeledSample> = resized.iter().collect();

        let losses = train_step(&mut state, &refs, kind, config, config.lr_at(step))?;

        let done = state.step == config.iterations;
        let val_due = config.val_interval > 0 && state.step % config.val_interval == 0;
        let val_dice = match (val_set, val_due || done) {
            (Some(val), true) => Some(validation_dice(&state.model, val)?),
            _ => None,
        };
        history.rows.push(HistoryRow {
            step: state.step,
            kind,
            losses,
            val_dice,
        });

        if let Some(path) = checkpoint_path {
            let ckpt_due = config.checkpoint_interval > 0
                && state.step % config.checkpoint_interval == 0;
            if ckpt_due || done {
                model::save_checkpoint(path, &state.to_checkpoint())?;
            }
        }
    }
    Ok((state.model, history))
}

// ---------------------------------------------------------------------------
