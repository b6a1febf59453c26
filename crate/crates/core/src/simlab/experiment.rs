use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::matching::Assignment;
use crate::stability::{unstable_score, StabilityRow};

use super::scene::{gen_scene, make_ab_scenario, rng_for, Scene, NOISE_STREAM};
use super::train::{draw_noise, match_scene, train_step_with_noise, ExperimentConfig, PairStat, Scenario};

/// Steps before flips are counted.
pub const BURN_IN: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Matched prediction per ground truth.
    pub matched: Vec<usize>,
    /// Per prediction, at the start of the step (unperturbed).
    pub probabilities: Vec<f64>,
    /// Per prediction, best IoU against any ground truth at the start of the step.
    pub ious: Vec<f64>,
    pub loss: f64,
    /// Unstable score against the previous step's matching.
    pub unstable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Matching changes between consecutive steps after [`BURN_IN`].
    pub flip_count: usize,
    pub final_pairs: Vec<PairStat>,
    /// Prediction holding each ground truth at the last step.
    pub winner: Vec<usize>,
}

impl RunReport {
    pub fn unstable_trajectory(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.unstable).collect()
    }

    /// Mean unstable score over the steps after [`BURN_IN`]; 0 when the run is
    /// no longer than the burn-in.
    pub fn mean_post_burnin_unstable(&self) -> f64 {
        let tail: Vec<f64> = self.steps.iter().skip(BURN_IN + 1).map(|s| s.unstable).collect();
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }

    pub fn stability_rows(&self) -> Vec<StabilityRow> {
        self.steps
            .iter()
            .map(|s| StabilityRow {
                scene_id: self.seed,
                layer_or_step: s.step,
                unstable_score: s.unstable,
            })
            .collect()
    }

    /// `step,matched_index,p_A,p_B,iou_A,iou_B,loss` for two-prediction
    /// scenes; `matched_index` is the prediction holding ground truth 0.
    pub fn ab_trajectory_csv(&self) -> String {
        let mut out = String::from("step,matched_index,p_A,p_B,iou_A,iou_B,loss\n");
        for s in &self.steps {
            let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                s.step,
                s.matched[0],
                get(&s.probabilities, 0),
                get(&s.probabilities, 1),
                get(&s.ious, 0),
                get(&s.ious, 1),
                s.loss
            ));
        }
        out
    }
}

pub fn initial_scene(config: &ExperimentConfig, seed: u64) -> Result<Scene> {
    match config.scenario {
        Scenario::Ab => Ok(make_ab_scenario(seed)),
        Scenario::Random { n_gt, n_pred } => gen_scene(seed, n_gt, n_pred),
    }
}

fn best_ious(scene: &Scene) -> Vec<f64> {
    scene
        .predictions
        .iter()
        .map(|p| {
            let b = p.decode();
            scene.ground_truths.iter().map(|g| iou(&b, &g.bbox)).fold(0.0, f64::max)
        })
        .collect()
}

fn matched(a: &Assignment) -> Vec<usize> {
    a.matched_predictions().collect()
}

/// Trains `scene` for `config.steps` steps. The noise stream is derived from
/// `seed`. The step-0 unstable score compares against the matching of the
/// unperturbed initial scene.
pub fn run_scene(scene: Scene, config: &ExperimentConfig, seed: u64) -> Result<RunReport> {
    config.validate()?;
    let mut rng = rng_for(seed, NOISE_STREAM);
    let n_gt = scene.n_gt();
    let mut previous = match_scene(&scene, config)?;
    let mut scene = scene;
    let mut steps = Vec::with_capacity(config.steps);
    let mut last_pairs = Vec::new();

    for step in 0..config.steps {
        let probabilities = scene.predictions.iter().map(|p| p.probability()).collect();
        let ious = best_ious(&scene);
        let noise = draw_noise(config.noise_std, scene.n_pred(), &mut rng)?;
        let (next, diag) = train_step_with_noise(&scene, config, &noise)?;
        let unstable = unstable_score(&previous, &diag.assignment, n_gt)?;
        steps.push(StepRecord {
            step,
            matched: matched(&diag.assignment),
            probabilities,
            ious,
            loss: diag.loss.total,
            unstable,
        });
        previous = diag.assignment;
        last_pairs = diag.pairs;
        scene = next;
    }

    let flip_count = steps
        .windows(2)
        .skip(BURN_IN)
        .map(|w| w[0].matched.iter().zip(&w[1].matched).filter(|(a, b)| a != b).count())
        .sum();
    let winner = steps.last().map(|s| s.matched.clone()).unwrap_or_default();
    Ok(RunReport {
        seed,
        steps,
        flip_count,
        final_pairs: last_pairs,
        winner,
    })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunReport> {
    run_scene(initial_scene(config, seed)?, config, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mode: super::train::Mode,
    pub seeds: Vec<u64>,
    /// Prediction index → number of (seed, ground truth) pairs it won.
    pub winner_histogram: BTreeMap<usize, usize>,
    pub flip_count_post_burnin: Vec<usize>,
    pub total_flips_post_burnin: usize,
    pub mean_post_burnin_unstable: f64,
    pub mean_unstable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Ordered by seed.
    pub runs: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn summary(&self) -> ExperimentSummary {
        let mut winner_histogram = BTreeMap::new();
        for run in &self.runs {
            for &w in &run.winner {
                *winner_histogram.entry(w).or_insert(0) += 1;
            }
        }
        let flips: Vec<usize> = self.runs.iter().map(|r| r.flip_count).collect();
        let n = self.runs.len().max(1) as f64;
        let mean_post = self.runs.iter().map(RunReport::mean_post_burnin_unstable).sum::<f64>() / n;
        let mean_all = self
            .runs
            .iter()
            .map(|r| r.steps.iter().map(|s| s.unstable).sum::<f64>() / r.steps.len().max(1) as f64)
            .sum::<f64>()
            / n;
        ExperimentSummary {
            mode: self.config.mode,
            seeds: self.runs.iter().map(|r| r.seed).collect(),
            winner_histogram,
            total_flips_post_burnin: flips.iter().sum(),
            flip_count_post_burnin: flips,
            mean_post_burnin_unstable: mean_post,
            mean_unstable: mean_all,
        }
    }

    /// Number of runs in which prediction `pred` holds ground truth 0 at the end.
    pub fn wins_for(&self, pred: usize) -> usize {
        self.runs.iter().filter(|r| r.winner.first() == Some(&pred)).count()
    }

    pub fn stability_rows(&self) -> Vec<StabilityRow> {
        self.runs.iter().flat_map(RunReport::stability_rows).collect()
    }
}

/// Runs seeds `config.seed .. config.seed + n_seeds` in parallel; the report
/// is ordered by seed regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig, n_seeds: usize) -> Result<ExperimentReport> {
    config.validate()?;
    if n_seeds == 0 {
        return Err(Error::InvalidArgument {
            arg: "n_seeds",
            reason: "must be >= 1".into(),
        });
    }
    let runs = (0..n_seeds as u64)
        .into_par_iter()
        .map(|k| run_seed(config, config.seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { config: *config, runs })
}
