//! Central finite-difference checks of the analytic gradients.
//!
//! Relative error is `|analytic - numeric| / max(1, |analytic|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{grad_loss_wrt_p, loss_term, F1Variant, LossTerm};
use crate::simlab::{
    gen_scene, match_scene, objective, objective_and_grad, plan_step, ExperimentConfig, Mode, Scene, StepPlan,
};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Samples closer than this to a non-differentiable point are skipped.
const KINK_MARGIN: f64 = 1e-3;

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Negative control: perturbs every analytic gradient by 1%.
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub kind: String,
    pub samples: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub passed: bool,
}

fn tamper(g: f64, corrupt: bool) -> f64 {
    if corrupt {
        g * 1.01 + 1e-2
    } else {
        g
    }
}

fn entry(kind: &str, errors: &[f64]) -> GradCheckEntry {
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    GradCheckEntry {
        kind: kind.into(),
        samples: errors.len(),
        max_rel_error,
        passed: max_rel_error < REL_TOL,
    }
}

/// Per-example loss terms at random `(p, s, γ ∈ {1, 2, 4})`.
pub fn check_loss_terms(opts: &GradCheckOptions) -> Vec<GradCheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut focal = Vec::new();
    let mut supervised = Vec::new();
    let mut negative = Vec::new();
    while supervised.len() < opts.n_samples {
        let p: f64 = rng.random_range(0.01..0.99);
        let s: f64 = rng.random_range(0.0..1.0);
        let gamma = [1.0, 2.0, 4.0][rng.random_range(0..3)];
        let variant = F1Variant::ALL[rng.random_range(0..F1Variant::ALL.len())];
        let target = variant.eval(s, p);
        if (target - p).abs() < KINK_MARGIN {
            continue;
        }
        for (term, out) in [
            (LossTerm::FocalPositive, &mut focal),
            (LossTerm::SupervisedPositive { target }, &mut supervised),
            (LossTerm::Negative, &mut negative),
        ] {
            let analytic = tamper(grad_loss_wrt_p(term, p, gamma), opts.corrupt);
            let numeric = central_difference(|x| loss_term(term, x, gamma), p, FD_STEP);
            out.push(relative_error(analytic, numeric));
        }
    }
    vec![
        entry("focal_positive", &focal),
        entry("supervised_positive", &supervised),
        entry("negative", &negative),
    ]
}

/// True when some matched box sits within [`KINK_MARGIN`] of a point where
/// the L1 or GIoU losses are not differentiable.
fn near_kink(scene: &Scene, plan: &StepPlan) -> bool {
    plan.assignment.pairs().iter().any(|&(p, g)| {
        let a = scene.predictions[p].decode().corners();
        let b = scene.ground_truths[g].bbox.corners();
        let corner_tie = a.iter().zip(&b).any(|(x, y)| (x - y).abs() < KINK_MARGIN);
        let cross_x = (a[2] - b[0]).abs() < KINK_MARGIN || (b[2] - a[0]).abs() < KINK_MARGIN;
        let cross_y = (a[3] - b[1]).abs() < KINK_MARGIN || (b[3] - a[1]).abs() < KINK_MARGIN;
        corner_tie || cross_x || cross_y
    })
}

/// Largest relative error between the analytic step gradient and central
/// differences of the objective, over every parameter of `scene`, with the
/// plan (assignment and targets) held fixed.
pub fn step_gradient_error(scene: &Scene, plan: &StepPlan, config: &ExperimentConfig, corrupt: bool) -> f64 {
    let (_, grad) = objective_and_grad(scene, plan, config);
    let base = scene.params();
    let mut worst: f64 = 0.0;
    for (k, &g) in grad.iter().enumerate() {
        let f = |x: f64| {
            let mut params = base.clone();
            params[k] = x;
            objective(&scene.with_params(&params), plan, config).total
        };
        let numeric = central_difference(f, base[k], FD_STEP);
        worst = worst.max(relative_error(tamper(g, corrupt), numeric));
    }
    worst
}

/// End-to-end objective on random scenes, one entry per mode.
pub fn check_step_objective(opts: &GradCheckOptions) -> Result<Vec<GradCheckEntry>> {
    let mut entries = Vec::new();
    for (kind, mode) in [("step_default", Mode::Default), ("step_stable", Mode::Stable)] {
        let config = ExperimentConfig {
            mode,
            ..ExperimentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let mut errors = Vec::with_capacity(opts.n_samples);
        while errors.len() < opts.n_samples {
            let n_gt = rng.random_range(1..=3);
            let n_pred = n_gt + rng.random_range(0..=3);
            let scene = gen_scene(rng.random(), n_gt, n_pred)?;
            let assignment = match_scene(&scene, &config)?;
            let plan = plan_step(&scene, &assignment, &config)?;
            if near_kink(&scene, &plan) {
                continue;
            }
            errors.push(step_gradient_error(&scene, &plan, &config, opts.corrupt));
        }
        entries.push(entry(kind, &errors));
    }
    Ok(entries)
}

/// Runs every suite. `n_samples` loss draws and `n_samples / 10` (at least
/// one) scenes per mode.
pub fn run_grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut entries = check_loss_terms(opts);
    let scene_opts = GradCheckOptions {
        n_samples: (opts.n_samples / 10).max(1),
        ..*opts
    };
    entries.extend(check_step_objective(&scene_opts)?);
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradCheckReport { entries, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_gradients_pass() {
        let report = run_grad_check(&GradCheckOptions {
            n_samples: 200,
            seed: 1,
            corrupt: false,
        })
        .unwrap();
        for e in &report.entries {
            assert!(e.passed, "{e:?}");
        }
        assert!(report.passed);
    }

    #[test]
    fn corrupted_gradients_fail() {
        let report = run_grad_check(&GradCheckOptions {
            n_samples: 20,
            seed: 1,
            corrupt: true,
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.entries.iter().all(|e| !e.passed));
    }
}
