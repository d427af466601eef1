//! Runtime verification of every analytic gradient against central finite
//! differences, plus value-level properties of the box projection. The CLI
//! exposes these as `loss-check`, and a named gradient can be deliberately
//! corrupted to prove the harness actually catches wrong math.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotations::{BoxLabel, DenseMask, PointLabel, ScribbleLabel, ScribbleMark};
use crate::error::{Error, Result};
use crate::losses::{self, box_projection, PredictionMap};

const FD_STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-9;
const SIDE: usize = 8;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Names accepted by the fault injector, one per gradient under test.
pub const GRADIENT_CHECKS: [&str; 7] = [
    "bce",
    "dice",
    "dense",
    "box",
    "scribble",
    "consistency",
    "point",
];

/// Random logits whose values (and hence probabilities, row maxima, and
/// column maxima) are pairwise separated by far more than the probe step,
/// so no finite-difference probe straddles an argmax or min/max tie. The
/// half-step offset also keeps every logit away from the uncertainty kink
/// at zero.
fn tie_broken_logits(rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = SIDE * SIDE;
    let mut levels: Vec<f64> = (0..n)
        .map(|k| -2.0 + 4.0 * (k as f64 + 0.5) / n as f64 + rng.gen_range(-0.02..0.02))
        .collect();
    levels.shuffle(rng);
    Array2::from_shape_vec((SIDE, SIDE), levels).expect("level count matches grid")
}

fn random_mask(rng: &mut ChaCha8Rng) -> DenseMask {
    loop {
        let m = DenseMask::from_fn(SIDE, SIDE, |_, _| rng.gen_bool(0.4));
        if m.fg_count() > 0 && m.fg_count() < SIDE * SIDE {
            return m;
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoxLabel {
    let r0 = rng.gen_range(0..SIDE - 2);
    let c0 = rng.gen_range(0..SIDE - 2);
    let r1 = rng.gen_range(r0..SIDE);
    let c1 = rng.gen_range(c0..SIDE);
    BoxLabel::new(r0, c0, r1, c1).expect("ordered corners")
}

fn random_scribble(rng: &mut ChaCha8Rng) -> ScribbleLabel {
    loop {
        let grid = Array2::from_shape_fn((SIDE, SIDE), |_| match rng.gen_range(0..4) {
            0 => ScribbleMark::Foreground,
            1 => ScribbleMark::Background,
            _ => ScribbleMark::Unlabeled,
        });
        if let Ok(s) = ScribbleLabel::new(grid) {
            return s;
        }
    }
}

fn random_points(rng: &mut ChaCha8Rng) -> PointLabel {
    loop {
        let mut cells: Vec<(usize, usize)> = (0..SIDE)
            .flat_map(|r| (0..SIDE).map(move |c| (r, c)))
            .collect();
        cells.shuffle(rng);
        let fg: Vec<_> = cells[..3].to_vec();
        let bg: Vec<_> = cells[3..6].to_vec();
        if let Ok(p) = PointLabel::new(fg, bg, SIDE, SIDE) {
            return p;
        }
    }
}

fn central_diff(mut f: impl FnMut(&Array2<f64>) -> f64, z: &Array2<f64>) -> Array2<f64> {
    let mut fd = Array2::zeros(z.dim());
    let mut probe = z.clone();
    for idx in 0..z.len() {
        let (r, c) = (idx / z.ncols(), idx % z.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + FD_STEP;
        let hi = f(&probe);
        probe[[r, c]] = orig - FD_STEP;
        let lo = f(&probe);
        probe[[r, c]] = orig;
        fd[[r, c]] = (hi - lo) / (2.0 * FD_STEP);
    }
    fd
}

fn worst_error(analytic: &Array2<f64>, fd: &Array2<f64>) -> (f64, f64) {
    let mut worst = (0.0, 0.0);
    for (a, f) in analytic.iter().zip(fd.iter()) {
        let err = (a - f).abs();
        let tol = a.abs().max(f.abs()) * REL_TOL + ABS_TOL;
        if err - tol > worst.0 - worst.1 {
            worst = (err, tol);
        }
    }
    worst
}

fn corrupt(grad: &mut Array2<f64>) {
    grad[[0, 0]] = grad[[0, 0]] * 1.5 + 0.05;
}

struct GradCase {
    analytic: Vec<Array2<f64>>,
    value_fns: Vec<Box<dyn FnMut(&Array2<f64>) -> f64>>,
    inputs: Vec<Array2<f64>>,
}

fn gradient_case(name: &str, rng: &mut ChaCha8Rng) -> GradCase {
    let z = tie_broken_logits(rng);
    let pred = PredictionMap::from_logits(z.clone());
    match name {
        "bce" => {
            let mask = random_mask(rng);
            let (_, g) = losses::bce_with_grad(&pred, &mask).unwrap();
            let m = mask.clone();
            GradCase {
                analytic: vec![g],
                value_fns: vec![Box::new(move |z| {
                    losses::bce_loss(&PredictionMap::from_logits(z.clone()), &m).unwrap()
                })],
                inputs: vec![z],
            }
        }
        "dice" => {
            let mask = random_mask(rng);
            let (_, g) = losses::dice_with_grad(&pred, &mask).unwrap();
            let m = mask.clone();
            GradCase {
                analytic: vec![g],
                value_fns: vec![Box::new(move |z| {
                    losses::dice_loss(&PredictionMap::from_logits(z.clone()), &m).unwrap()
                })],
                inputs: vec![z],
            }
        }
        "dense" => {
            let mask = random_mask(rng);
            let (_, g) = losses::dense_with_grad(&pred, &mask).unwrap();
            let m = mask.clone();
            GradCase {
                analytic: vec![g],
                value_fns: vec![Box::new(move |z| {
                    losses::dense_loss(&PredictionMap::from_logits(z.clone()), &m).unwrap()
                })],
                inputs: vec![z],
            }
        }
        "box" => {
            let label = random_box(rng);
            let (_, g) = losses::box_with_grad(&pred, &label).unwrap();
            GradCase {
                analytic: vec![g],
                value_fns: vec![Box::new(move |z| {
                    losses::box_loss(&PredictionMap::from_logits(z.clone()), &label).unwrap()
                })],
                inputs: vec![z],
            }
        }
        "scribble" => {
            let label = random_scribble(rng);
            let (_, g) = losses::scribble_with_grad(&pred, &label, 1.0).unwrap();
            GradCase {
                analytic: vec![g],
                value_fns: vec![Box::new(move |z| {
                    losses::scribble_loss(&PredictionMap::from_logits(z.clone()), &label, 1.0)
                        .unwrap()
                })],
                inputs: vec![z],
            }
        }
        "consistency" => {
            let z_b = tie_broken_logits(rng);
            let pred_b = PredictionMap::from_logits(z_b.clone());
            let (_, ga, gb) = losses::consistency_with_grad(&pred, &pred_b).unwrap();
            let zb1 = z_b.clone();
            let za2 = z.clone();
            GradCase {
                analytic: vec![ga, gb],
                value_fns: vec![
                    Box::new(move |za| {
                        losses::consistency_loss(
                            &PredictionMap::from_logits(za.clone()),
                            &PredictionMap::from_logits(zb1.clone()),
                        )
                        .unwrap()
                    }),
                    Box::new(move |zb| {
                        losses::consistency_loss(
                            &PredictionMap::from_logits(za2.clone()),
                            &PredictionMap::from_logits(zb.clone()),
                        )
                        .unwrap()
                    }),
                ],
                inputs: vec![z, z_b],
            }
        }
        "point" => {
            let label = random_points(rng);
            let z_b = tie_broken_logits(rng);
            let pred_b = PredictionMap::from_logits(z_b.clone());
            let (_, ga, gb) = losses::point_with_grad(&pred, &pred_b, &label, 1.0).unwrap();
            let (l1, l2) = (label.clone(), label);
            let (zb1, za2) = (z_b.clone(), z.clone());
            GradCase {
                analytic: vec![ga, gb],
                value_fns: vec![
                    Box::new(move |za| {
                        losses::point_loss(
                            &PredictionMap::from_logits(za.clone()),
                            &PredictionMap::from_logits(zb1.clone()),
                            &l1,
                            1.0,
                        )
                        .unwrap()
                    }),
                    Box::new(move |zb| {
                        losses::point_loss(
                            &PredictionMap::from_logits(za2.clone()),
                            &PredictionMap::from_logits(zb.clone()),
                            &l2,
                            1.0,
                        )
                        .unwrap()
                    }),
                ],
                inputs: vec![z, z_b],
            }
        }
        other => unreachable!("unknown gradient check {other}"),
    }
}

fn run_gradient_check(name: &str, trials: usize, seed: u64, inject: bool) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, f64::INFINITY);
    let mut worst_at = 0;
    for trial in 0..trials {
        let mut case = gradient_case(name, &mut rng);
        if inject {
            corrupt(&mut case.analytic[0]);
        }
        for ((analytic, value_fn), input) in case
            .analytic
            .iter()
            .zip(case.value_fns.iter_mut())
            .zip(case.inputs.iter())
        {
            let fd = central_diff(value_fn, input);
            let (err, tol) = worst_error(analytic, &fd);
            if err - tol > worst.0 - worst.1 {
                worst = (err, tol);
                worst_at = trial;
            }
        }
    }
    CheckReport {
        name: format!("grad/{name}"),
        passed: worst.0 <= worst.1,
        detail: format!(
            "worst |analytic-fd| {:.3e} vs tol {:.3e} (trial {worst_at}, {trials} trials)",
            worst.0, worst.1
        ),
    }
}

fn projection_of(probs: &Array2<f64>) -> Array2<f64> {
    box_projection(probs).probs().clone()
}

fn run_projection_checks(trials: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626f78);
    let mut idem = (true, String::from("projection is a fixed point of itself"));
    let mut dominate = (true, String::from("projection >= input everywhere"));
    let mut permute = (true, String::from("row shuffles commute with projection"));
    for trial in 0..trials {
        let probs = tie_broken_logits(&mut rng).mapv(|z| 1.0 / (1.0 + (-z).exp()));
        let proj = projection_of(&probs);

        let twice = projection_of(&proj);
        if twice.iter().zip(proj.iter()).any(|(a, b)| (a - b).abs() > 1e-12) {
            idem = (false, format!("re-projection moved values (trial {trial})"));
        }

        if proj.iter().zip(probs.iter()).any(|(b, p)| *b < *p - 1e-12) {
            dominate = (false, format!("projection fell below input (trial {trial})"));
        }

        let mut order: Vec<usize> = (0..SIDE).collect();
        order.shuffle(&mut rng);
        let shuffled = Array2::from_shape_fn((SIDE, SIDE), |(r, c)| probs[[order[r], c]]);
        let proj_shuffled = projection_of(&shuffled);
        let shuffled_proj = Array2::from_shape_fn((SIDE, SIDE), |(r, c)| proj[[order[r], c]]);
        if proj_shuffled
            .iter()
            .zip(shuffled_proj.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            permute = (false, format!("row shuffle changed projection (trial {trial})"));
        }
    }
    vec![
        CheckReport {
            name: "projection/idempotent".into(),
            passed: idem.0,
            detail: idem.1,
        },
        CheckReport {
            name: "projection/dominates".into(),
            passed: dominate.0,
            detail: dominate.1,
        },
        CheckReport {
            name: "projection/permutation".into(),
            passed: permute.0,
            detail: permute.1,
        },
    ]
}

/// Runs every gradient and projection check. `inject_fault` corrupts the
/// named gradient before comparison, which a healthy harness must report as
/// a failure.
pub fn run_all(trials: usize, seed: u64, inject_fault: Option<&str>) -> Result<Vec<CheckReport>> {
    if let Some(name) = inject_fault {
        if !GRADIENT_CHECKS.contains(&name) {
            return Err(Error::InvalidConfig(format!(
                "unknown fault target {name:?}; expected one of {}",
                GRADIENT_CHECKS.join(", ")
            )));
        }
    }
    let mut reports = Vec::new();
    for (i, name) in GRADIENT_CHECKS.iter().enumerate() {
        let inject = inject_fault == Some(name);
        reports.push(run_gradient_check(
            name,
            trials,
            seed.wrapping_add(i as u64),
            inject,
        ));
    }
    reports.extend(run_projection_checks(trials, seed));
    Ok(reports)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradients_match_finite_differences() {
        let reports = run_all(3, 17, None).unwrap();
        assert_eq!(reports.len(), GRADIENT_CHECKS.len() + 3);
        for r in &reports {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let reports = run_all(2, 17, Some("dice")).unwrap();
        for r in &reports {
            if r.name == "grad/dice" {
                assert!(!r.passed, "corrupted dice gradient slipped through");
            } else {
                assert!(r.passed, "{} failed: {}", r.name, r.detail);
            }
        }
    }

    #[test]
    fn unknown_fault_target_is_rejected() {
        assert!(matches!(
            run_all(1, 0, Some("nope")),
            Err(Error::InvalidConfig(_))
        ));
    }
}
