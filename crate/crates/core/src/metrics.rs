//! Dice/IoU evaluation and report emission.
//!
//! Per-image scores are computed at native ground-truth resolution (the
//! prediction is bilinearly upsampled first), averaged per dataset, and
//! combined across datasets by image count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::DenseMask;
use crate::data::{Annotation, LabeledSample};
use crate::error::{Error, Result};
use crate::grid::bilinear_resize;
use crate::losses::PredictionMap;
use crate::plots;
use crate::trainer::TrainHistory;
use crate::ImageTensor;

/// Table 1 dataset order, used to arrange CSV rows when names match.
const CANONICAL_ORDER: [&str; 5] = ["CVC-ColonDB", "Kvasir", "CVC-ClinicDB", "CVC-300", "ETIS"];

pub fn binarize(pred: &PredictionMap, threshold: f64) -> DenseMask {
    let probs = pred.probs();
    DenseMask::from_fn(probs.nrows(), probs.ncols(), |r, c| probs[[r, c]] > threshold)
}

fn overlap_counts(pred: &DenseMask, gt: &DenseMask) -> Result<(usize, usize, usize)> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch {
            expected: gt.dim(),
            got: pred.dim(),
        });
    }
    let mut inter = 0;
    for (a, b) in pred.grid().iter().zip(gt.grid().iter()) {
        inter += (*a == 1 && *b == 1) as usize;
    }
    Ok((inter, pred.fg_count(), gt.fg_count()))
}

pub fn dice_coeff(pred: &DenseMask, gt: &DenseMask) -> Result<f64> {
    let (inter, p, g) = overlap_counts(pred, gt)?;
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

pub fn iou(pred: &DenseMask, gt: &DenseMask) -> Result<f64> {
    let (inter, p, g) = overlap_counts(pred, gt)?;
    let union = p + g - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Count-weighted mean of `(value, count)` rows.
pub fn weighted_average(per_dataset: &[(f64, usize)]) -> Result<f64> {
    let total: usize = per_dataset.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = per_dataset.iter().map(|(v, n)| v * *n as f64).sum();
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    pub name: String,
    pub count: usize,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavgScores {
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub datasets: Vec<DatasetScores>,
    pub wavg: WavgScores,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Rows ordered like Table 1 when every name is one of its datasets,
    /// percentages at one decimal, wAVG last.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&DatasetScores> = self.datasets.iter().collect();
        let rank = |name: &str| CANONICAL_ORDER.iter().position(|&c| c == name);
        if rows.iter().all(|d| rank(&d.name).is_some()) {
            rows.sort_by_key(|d| rank(&d.name));
        }
        let mut out = String::from("dataset,count,dice,iou\n");
        for d in rows {
            out.push_str(&format!(
                "{},{},{:.1},{:.1}\n",
                d.name,
                d.count,
                100.0 * d.dice,
                100.0 * d.iou
            ));
        }
        let total: usize = self.datasets.iter().map(|d| d.count).sum();
        out.push_str(&format!(
            "wAVG,{},{:.1},{:.1}\n",
            total,
            100.0 * self.wavg.dice,
            100.0 * self.wavg.iou
        ));
        out
    }
}

/// Scores `predict` against pixel-kind datasets. Predictions whose size
/// differs from the ground truth are bilinearly upsampled to it before
/// thresholding, so every image is judged at native resolution.
pub fn evaluate<F>(
    mut predict: F,
    test_sets: &[(String, Vec<LabeledSample>)],
    threshold: f64,
) -> Result<MetricsReport>
where
    F: FnMut(&ImageTensor) -> Result<PredictionMap>,
{
    if test_sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut datasets = Vec::with_capacity(test_sets.len());
    for (name, samples) in test_sets {
        if samples.is_empty() {
            return Err(Error::EmptyDataset(name.clone()));
        }
        let mut dice_sum = 0.0;
        let mut iou_sum = 0.0;
        for sample in samples {
            let Annotation::Dense(gt) = &sample.annotation else {
                return Err(Error::InvalidLabel(format!(
                    "test sample {} must carry a dense mask",
                    sample.name
                )));
            };
            let pred = predict(&sample.image)?;
            let (gh, gw) = gt.dim();
            let mask = if pred.dim() == (gh, gw) {
                binarize(&pred, threshold)
            } else {
                let probs = bilinear_resize(pred.probs(), gh, gw);
                binarize(&PredictionMap::from_probs(probs), threshold)
            };
            dice_sum += dice_coeff(&mask, gt)?;
            iou_sum += iou(&mask, gt)?;
        }
        let n = samples.len();
        datasets.push(DatasetScores {
            name: name.clone(),
            count: n,
            dice: dice_sum / n as f64,
            iou: iou_sum / n as f64,
        });
    }
    let dice_rows: Vec<(f64, usize)> = datasets.iter().map(|d| (d.dice, d.count)).collect();
    let iou_rows: Vec<(f64, usize)> = datasets.iter().map(|d| (d.iou, d.count)).collect();
    let wavg = WavgScores {
        dice: weighted_average(&dice_rows)?,
        iou: weighted_average(&iou_rows)?,
    };
    Ok(MetricsReport {
        datasets,
        wavg,
        threshold,
    })
}

/// Writes report.json, report.csv, a per-dataset score bar chart, and (when
/// a history is supplied) the training loss curve.
pub fn emit_report(
    report: &MetricsReport,
    out_dir: &Path,
    history: Option<&TrainHistory>,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json())?;
    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    plots::score_bars(&out_dir.join("scores.png"), report)?;
    if let Some(history) = history {
        plots::training_curve(&out_dir.join("training_curve.png"), history)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
