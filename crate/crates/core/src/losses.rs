//! Supervision losses, one family per annotation kind, plus their analytic
//! gradients with respect to the prediction logits.
//!
//! All four weak-supervision losses reduce to compositions of binary
//! cross-entropy, Dice overlap, an uncertainty penalty, and a mean-squared
//! consistency term:
//!
//! - pixel and polygon samples: BCE + Dice against the dense mask
//! - box samples: BCE + Dice in box space, after projecting the prediction
//!   onto its row/column maxima and back
//! - scribble samples: BCE on the marked pixels, uncertainty on the rest
//! - point samples: consistency between predictions on the original and a
//!   rotated view, plus BCE at the annotated coordinates
//!
//! Every `*_with_grad` variant returns the loss together with `dL/dlogits`,
//! verified against central finite differences (see [`crate::checks`]).

use ndarray::Array2;

use crate::annotations::{BoxLabel, DenseMask, PointLabel, ScribbleLabel, ScribbleMark};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` wherever a
/// logarithm is taken.
pub const PROB_EPSILON: f64 = 1e-7;

/// Additive smoothing in the Dice ratio.
pub const DICE_SMOOTHING: f64 = 1.0;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// An `H×W` probability map paired with the logits it came from.
///
/// `probs` is elementwise `sigmoid(logits)` clamped strictly inside (0,1),
/// so every loss below can take logarithms without guards.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    probs: Array2<f64>,
    logits: Array2<f64>,
}

impl PredictionMap {
    pub fn from_logits(logits: Array2<f64>) -> Self {
        let probs = logits.mapv(|z| clamp_prob(sigmoid(z)));
        Self { probs, logits }
    }

    /// Builds the map from target probabilities (clamped), deriving logits.
    pub fn from_probs(probs: Array2<f64>) -> Self {
        let probs = probs.mapv(clamp_prob);
        let logits = probs.mapv(|p| (p / (1.0 - p)).ln());
        Self { probs, logits }
    }

    /// Rotates probabilities and logits by the same permutation, so the
    /// rotated-back prediction of a rotation-equivariant predictor is
    /// bit-identical to the original (no sigmoid roundtrip).
    pub fn rotated(&self, quarter_turns: usize) -> Self {
        Self {
            probs: crate::grid::rotate90(&self.probs, quarter_turns),
            logits: crate::grid::rotate90(&self.logits, quarter_turns),
        }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn dim(&self) -> (usize, usize) {
        self.probs.dim()
    }
}

/// Per-kind loss sums for one training step. Kinds absent from the step stay
/// zero, so the total is always the plain component sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub polygon: f64,
    pub boxes: f64,
    pub scribble: f64,
    pub points: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.pixel + self.polygon + self.boxes + self.scribble + self.points
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dense supervision: BCE + Dice
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy of the probability map against a binary mask.
pub fn bce_loss(pred: &PredictionMap, target: &DenseMask) -> Result<f64> {
    check_shapes(pred.dim(), target.dim())?;
    let n = pred.probs.len() as f64;
    let mut acc = 0.0;
    for (p, t) in pred.probs.iter().zip(target.grid().iter()) {
        let t = f64::from(*t);
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(acc / n)
}

/// BCE and its gradient with respect to the logits: `(p - t) / N`.
pub fn bce_with_grad(pred: &PredictionMap, target: &DenseMask) -> Result<(f64, Array2<f64>)> {
    let loss = bce_loss(pred, target)?;
    let n = pred.probs.len() as f64;
    let mut grad = pred.probs.clone();
    for (g, t) in grad.iter_mut().zip(target.grid().iter()) {
        *g = (*g - f64::from(*t)) / n;
    }
    Ok((loss, grad))
}

fn dice_parts(probs: &Array2<f64>, target: &DenseMask) -> (f64, f64) {
    let mut inter = 0.0;
    let mut mass = 0.0;
    for (p, t) in probs.iter().zip(target.grid().iter()) {
        inter += p * f64::from(*t);
        mass += p + f64::from(*t);
    }
    // Numerator and denominator of the smoothed overlap ratio.
    (2.0 * inter + DICE_SMOOTHING, mass + DICE_SMOOTHING)
}

/// Smoothed Dice loss `1 - (2Σpt + s) / (Σp + Σt + s)`.
pub fn dice_loss(pred: &PredictionMap, target: &DenseMask) -> Result<f64> {
    check_shapes(pred.dim(), target.dim())?;
    let (num, den) = dice_parts(&pred.probs, target);
    Ok(1.0 - num / den)
}

/// Dice gradient in probability space, shared by the plain and box-space
/// variants.
fn dice_grad_prob(probs: &Array2<f64>, target: &DenseMask) -> Array2<f64> {
    let (num, den) = dice_parts(probs, target);
    let mut grad = Array2::zeros(probs.dim());
    for ((g, _p), t) in grad.iter_mut().zip(probs.iter()).zip(target.grid().iter()) {
        let t = f64::from(*t);
        *g = -(2.0 * t * den - num) / (den * den);
    }
    grad
}

pub fn dice_with_grad(pred: &PredictionMap, target: &DenseMask) -> Result<(f64, Array2<f64>)> {
    let loss = dice_loss(pred, target)?;
    let mut grad = dice_grad_prob(&pred.probs, target);
    for (g, p) in grad.iter_mut().zip(pred.probs.iter()) {
        *g *= p * (1.0 - p);
    }
    Ok((loss, grad))
}

/// The composite used for pixel and polygon samples: BCE + Dice.
pub fn dense_loss(pred: &PredictionMap, target: &DenseMask) -> Result<f64> {
    Ok(bce_loss(pred, target)? + dice_loss(pred, target)?)
}

pub fn dense_with_grad(pred: &PredictionMap, target: &DenseMask) -> Result<(f64, Array2<f64>)> {
    let (lb, gb) = bce_with_grad(pred, target)?;
    let (ld, gd) = dice_with_grad(pred, target)?;
    Ok((lb + ld, gb + gd))
}

// ---------------------------------------------------------------------------
// Box supervision
// ---------------------------------------------------------------------------

/// Box-space projection of a probability map.
///
/// Row vector `r_i = max_j P[i,j]` and column vector `c_j = max_i P[i,j]`
/// are broadcast back as `B[i,j] = min(r_i, c_j)`, turning any prediction
/// into its tightest enclosing box shape. `B >= P` pointwise, and box-shaped
/// maps are fixed points. Gradients route through the arg-max/arg-min
/// choices (first index wins ties; the row side wins the min tie).
pub struct BoxProjection {
    probs: Array2<f64>,
    row_argmax: Vec<usize>,
    col_argmax: Vec<usize>,
    uses_row: Array2<bool>,
}

pub fn box_projection(probs: &Array2<f64>) -> BoxProjection {
    let (h, w) = probs.dim();
    let mut row_max = vec![f64::NEG_INFINITY; h];
    let mut row_argmax = vec![0usize; h];
    let mut col_max = vec![f64::NEG_INFINITY; w];
    let mut col_argmax = vec![0usize; w];
    for ((i, j), &p) in probs.indexed_iter() {
        if p > row_max[i] {
            row_max[i] = p;
            row_argmax[i] = j;
        }
        if p > col_max[j] {
            col_max[j] = p;
            col_argmax[j] = i;
        }
    }
    let mut out = Array2::zeros((h, w));
    let mut uses_row = Array2::from_elem((h, w), false);
    for ((i, j), b) in out.indexed_iter_mut() {
        if row_max[i] <= col_max[j] {
            *b = row_max[i];
            uses_row[[i, j]] = true;
        } else {
            *b = col_max[j];
        }
    }
    BoxProjection {
        probs: out,
        row_argmax,
        col_argmax,
        uses_row,
    }
}

impl BoxProjection {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// Pushes a gradient in box space back onto the source probabilities.
    fn backprop(&self, grad_box: &Array2<f64>) -> Array2<f64> {
        let mut grad = Array2::zeros(grad_box.dim());
        for ((i, j), &g) in grad_box.indexed_iter() {
            if self.uses_row[[i, j]] {
                grad[[i, self.row_argmax[i]]] += g;
            } else {
                grad[[self.col_argmax[j], j]] += g;
            }
        }
        grad
    }
}

/// Dense loss between the box-projected prediction and the rasterized label
/// box, so supervision constrains location and extent but not shape.
pub fn box_loss(pred: &PredictionMap, label: &BoxLabel) -> Result<f64> {
    let (h, w) = pred.dim();
    let target = crate::annotations::rasterize_box(label, h, w)?;
    let projected = box_projection(&pred.probs);
    let boxed = PredictionMap {
        logits: Array2::zeros((h, w)),
        probs: projected.probs.clone(),
    };
    dense_loss(&boxed, &target)
}

pub fn box_with_grad(pred: &PredictionMap, label: &BoxLabel) -> Result<(f64, Array2<f64>)> {
    let (h, w) = pred.dim();
    let target = crate::annotations::rasterize_box(label, h, w)?;
    let projected = box_projection(&pred.probs);
    let b = projected.probs();
    let n = (h * w) as f64;

    let mut loss = 0.0;
    let mut grad_box = Array2::zeros((h, w));
    for ((g, p), t) in grad_box.iter_mut().zip(b.iter()).zip(target.grid().iter()) {
        let t = f64::from(*t);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = (-t / p + (1.0 - t) / (1.0 - p)) / n;
    }
    loss /= n;

    let (num, den) = dice_parts(b, &target);
    loss += 1.0 - num / den;
    grad_box += &dice_grad_prob(b, &target);

    let mut grad = projected.backprop(&grad_box);
    for (g, p) in grad.iter_mut().zip(pred.probs.iter()) {
        *g *= p * (1.0 - p);
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Scribble supervision
// ---------------------------------------------------------------------------

/// Confidence penalty `min(-ln p, -ln(1-p))`: zero at either extreme,
/// maximal (ln 2) at p = 0.5.
pub fn uncertainty_loss(p: f64) -> f64 {
    let p = clamp_prob(p);
    (-p.ln()).min(-(1.0 - p).ln())
}

/// Gradient of the uncertainty penalty with respect to the logit. The two
/// log branches chain through the sigmoid to `p` and `p - 1`; the kink at
/// p = 0.5 takes the lower branch.
fn uncertainty_grad_logit(p: f64) -> f64 {
    if p <= 0.5 {
        p
    } else {
        p - 1.0
    }
}

/// Mean BCE over the marked pixels plus `lambda_u` times the mean
/// uncertainty penalty over the unmarked ones (zero when nothing is
/// unmarked).
pub fn scribble_loss(pred: &PredictionMap, scribble: &ScribbleLabel, lambda_u: f64) -> Result<f64> {
    Ok(scribble_with_grad(pred, scribble, lambda_u)?.0)
}

pub fn scribble_with_grad(
    pred: &PredictionMap,
    scribble: &ScribbleLabel,
    lambda_u: f64,
) -> Result<(f64, Array2<f64>)> {
    check_shapes(pred.dim(), scribble.dim())?;
    let n_labeled = scribble.labeled_count();
    if n_labeled == 0 {
        return Err(Error::NoLabeledPixels);
    }
    let n_unlabeled = pred.probs.len() - n_labeled;

    let mut bce = 0.0;
    let mut unc = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for ((idx, &p), &mark) in pred.probs.indexed_iter().zip(scribble.grid().iter()) {
        match mark {
            ScribbleMark::Foreground | ScribbleMark::Background => {
                let t = f64::from(mark == ScribbleMark::Foreground);
                bce -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                grad[idx] = (p - t) / n_labeled as f64;
            }
            ScribbleMark::Unlabeled => {
                unc += uncertainty_loss(p);
                grad[idx] = lambda_u * uncertainty_grad_logit(p) / n_unlabeled as f64;
            }
        }
    }
    bce /= n_labeled as f64;
    let unc_mean = if n_unlabeled == 0 {
        0.0
    } else {
        unc / n_unlabeled as f64
    };
    Ok((bce + lambda_u * unc_mean, grad))
}

// ---------------------------------------------------------------------------
// Point supervision
// ---------------------------------------------------------------------------

/// Mean squared difference of two probability maps in the same frame.
pub fn consistency_loss(pred_a: &PredictionMap, pred_b: &PredictionMap) -> Result<f64> {
    check_shapes(pred_a.dim(), pred_b.dim())?;
    let n = pred_a.probs.len() as f64;
    let mut acc = 0.0;
    for (a, b) in pred_a.probs.iter().zip(pred_b.probs.iter()) {
        acc += (a - b) * (a - b);
    }
    Ok(acc / n)
}

/// Consistency loss with gradients for both branches' logits.
pub fn consistency_with_grad(
    pred_a: &PredictionMap,
    pred_b: &PredictionMap,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let loss = consistency_loss(pred_a, pred_b)?;
    let n = pred_a.probs.len() as f64;
    let mut grad_a = Array2::zeros(pred_a.dim());
    let mut grad_b = Array2::zeros(pred_b.dim());
    for (idx, &a) in pred_a.probs.indexed_iter() {
        let b = pred_b.probs[idx];
        let d = 2.0 * (a - b) / n;
        grad_a[idx] = d * a * (1.0 - a);
        grad_b[idx] = -d * b * (1.0 - b);
    }
    Ok((loss, grad_a, grad_b))
}

/// Mean BCE at the annotated coordinates only (foreground target 1,
/// background target 0). An empty point set contributes zero.
pub fn point_bce_loss(pred: &PredictionMap, points: &PointLabel) -> Result<f64> {
    Ok(point_bce_with_grad(pred, points)?.0)
}

pub fn point_bce_with_grad(
    pred: &PredictionMap,
    points: &PointLabel,
) -> Result<(f64, Array2<f64>)> {
    let (h, w) = pred.dim();
    let n = points.fg_points.len() + points.bg_points.len();
    let mut grad = Array2::zeros((h, w));
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut acc = 0.0;
    for (pts, t) in [(&points.fg_points, 1.0), (&points.bg_points, 0.0)] {
        for &(r, c) in pts {
            if r >= h || c >= w {
                return Err(Error::OutOfBounds {
                    row_min: r,
                    col_min: c,
                    row_max: r,
                    col_max: c,
                    height: h,
                    width: w,
                });
            }
            let p = pred.probs[[r, c]];
            acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            grad[[r, c]] += (p - t) / n as f64;
        }
    }
    Ok((acc / n as f64, grad))
}

/// Point-sample loss: consistency between the original-frame prediction and
/// the rotated branch mapped back, plus `lambda_p` times BCE at the points
/// (evaluated on the original-frame prediction only).
pub fn point_loss(
    pred: &PredictionMap,
    pred_rot_back: &PredictionMap,
    points: &PointLabel,
    lambda_p: f64,
) -> Result<f64> {
    Ok(consistency_loss(pred, pred_rot_back)? + lambda_p * point_bce_loss(pred, points)?)
}

/// Gradients for both branches; the second is still in the original frame
/// and must be rotated forward by the caller before model backprop.
pub fn point_with_grad(
    pred: &PredictionMap,
    pred_rot_back: &PredictionMap,
    points: &PointLabel,
    lambda_p: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (lc, mut grad_a, grad_b) = consistency_with_grad(pred, pred_rot_back)?;
    let (lp, grad_pts) = point_bce_with_grad(pred, points)?;
    grad_a.zip_mut_with(&grad_pts, |g, gp| *g += lambda_p * gp);
    Ok((lc + lambda_p * lp, grad_a, grad_b))
}

// ---------------------------------------------------------------------------
