use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_l1, box_l1_grad, giou_with_grad, iou};
use crate::loss::{grad_loss_wrt_p, loss_term, positive_targets, LossConfig, LossTerm, PositiveExample};
use crate::matching::{build_cost_matrix, hungarian, Assignment, CostWeights};

use super::scene::{sigmoid, Scene, PARAMS_PER_PREDICTION};

/// Which loss/cost pair drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Focal loss with the default classification cost.
    Default,
    /// Position-supervised loss with the position-modulated cost.
    Stable,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Mode::Default),
            "stable" => Ok(Mode::Stable),
            other => Err(Error::UnknownVariant(other.to_owned())),
        }
    }
}

/// Scenes an experiment trains on, one per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Scenario {
    /// The two-prediction A/B scene.
    Ab,
    Random {
        n_gt: usize,
        n_pred: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss_config: LossConfig,
    pub cost_weights: CostWeights,
    pub mode: Mode,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of the per-step logit perturbation.
    pub noise_std: f64,
    pub scenario: Scenario,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss_config: LossConfig::default(),
            cost_weights: CostWeights::default(),
            mode: Mode::Stable,
            steps: 500,
            learning_rate: 1e-3,
            seed: 0,
            noise_std: 0.1,
            scenario: Scenario::Ab,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_config.validate()?;
        self.cost_weights.validate()?;
        if self.loss_config.cost_weight != self.cost_weights.w_cls {
            return Err(Error::InvalidArgument {
                arg: "cost_weight",
                reason: format!(
                    "loss_config.cost_weight = {} disagrees with cost_weights.w_cls = {}",
                    self.loss_config.cost_weight, self.cost_weights.w_cls
                ),
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument {
                arg: "steps",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument {
                arg: "learning_rate",
                reason: format!("must be finite and > 0, got {}", self.learning_rate),
            });
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument {
                arg: "noise_std",
                reason: format!("must be finite and >= 0, got {}", self.noise_std),
            });
        }
        if let Scenario::Random { n_gt, n_pred } = self.scenario {
            if n_gt == 0 || n_pred < n_gt {
                return Err(Error::InvalidArgument {
                    arg: "scenario",
                    reason: format!("need n_pred >= n_gt >= 1, got n_gt={n_gt}, n_pred={n_pred}"),
                });
            }
        }
        Ok(())
    }
}

/// Matches predictions to ground truths with the cost of the given mode.
pub fn match_scene(scene: &Scene, config: &ExperimentConfig) -> Result<Assignment> {
    let cost = build_cost_matrix(
        &scene.decoded(),
        &scene.ground_truths,
        &config.cost_weights,
        &config.loss_config,
        config.mode == Mode::Stable,
    )?;
    hungarian(&cost)
}

/// Supervision for one step, computed once from the state at the start of
/// the step and then held constant: the assignment and the classification
/// term of every prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub assignment: Assignment,
    /// Per prediction: the matched ground truth, if any.
    pub matched_gt: Vec<Option<usize>>,
    pub terms: Vec<LossTerm>,
}

pub fn plan_step(scene: &Scene, assignment: &Assignment, config: &ExperimentConfig) -> Result<StepPlan> {
    if assignment.n_gt() != scene.n_gt() {
        return Err(Error::AssignmentMismatch(format!(
            "assignment covers {} ground truths, scene has {}",
            assignment.n_gt(),
            scene.n_gt()
        )));
    }
    let mut matched_gt = vec![None; scene.n_pred()];
    for &(p, g) in assignment.pairs() {
        if p >= scene.n_pred() {
            return Err(Error::AssignmentMismatch(format!("prediction {p} out of range")));
        }
        matched_gt[p] = Some(g);
    }

    let mut terms = vec![LossTerm::Negative; scene.n_pred()];
    match config.mode {
        Mode::Default => {
            for &(p, _) in assignment.pairs() {
                terms[p] = LossTerm::FocalPositive;
            }
        }
        Mode::Stable => {
            let positives: Vec<PositiveExample> = assignment
                .pairs()
                .iter()
                .map(|&(p, g)| {
                    let pred = &scene.predictions[p];
                    PositiveExample {
                        p: pred.probability(),
                        s: iou(&pred.decode(), &scene.ground_truths[g].bbox),
                    }
                })
                .collect();
            let targets = positive_targets(&positives, scene.max_iou(), &config.loss_config);
            for (&(p, _), target) in assignment.pairs().iter().zip(targets) {
                terms[p] = LossTerm::SupervisedPositive { target };
            }
        }
    }
    Ok(StepPlan {
        assignment: assignment.clone(),
        matched_gt,
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted classification loss.
    pub cls: f64,
    /// Weighted L1 loss.
    pub l1: f64,
    /// Weighted GIoU loss `1 - giou`.
    pub giou: f64,
    pub total: f64,
}

/// Total training objective under a fixed plan.
pub fn objective(scene: &Scene, plan: &StepPlan, config: &ExperimentConfig) -> LossBreakdown {
    objective_and_grad(scene, plan, config).0
}

/// Objective and its analytic gradient with respect to the flattened scene
/// parameters (five per prediction).
pub fn objective_and_grad(scene: &Scene, plan: &StepPlan, config: &ExperimentConfig) -> (LossBreakdown, Vec<f64>) {
    let gamma = config.loss_config.gamma;
    let w_cls = config.loss_config.cls_loss_weight;
    let w_l1 = config.cost_weights.w_bbox;
    let w_giou = config.cost_weights.w_giou;

    let mut out = LossBreakdown::default();
    let mut grad = vec![0.0; scene.n_pred() * PARAMS_PER_PREDICTION];
    for (k, pred) in scene.predictions.iter().enumerate() {
        let g = &mut grad[k * PARAMS_PER_PREDICTION..(k + 1) * PARAMS_PER_PREDICTION];

        let p = pred.probability();
        out.cls += w_cls * loss_term(plan.terms[k], p, gamma);
        g[4] = w_cls * grad_loss_wrt_p(plan.terms[k], p, gamma) * p * (1.0 - p);

        let Some(gt) = plan.matched_gt[k] else {
            continue;
        };
        let target = &scene.ground_truths[gt].bbox;
        let bbox = pred.decode();
        let (giou, d_giou) = giou_with_grad(&bbox, target);
        let d_l1 = box_l1_grad(&bbox, target);
        out.l1 += w_l1 * box_l1(&bbox, target);
        out.giou += w_giou * (1.0 - giou);

        let d_corner: [f64; 4] = std::array::from_fn(|c| w_l1 * d_l1[c] - w_giou * d_giou[c]);
        // x0 = cx - w/2, x1 = cx + w/2, w = softplus(w_raw)
        let dw = sigmoid(pred.w_raw);
        let dh = sigmoid(pred.h_raw);
        g[0] = d_corner[0] + d_corner[2];
        g[1] = d_corner[1] + d_corner[3];
        g[2] = 0.5 * (d_corner[2] - d_corner[0]) * dw;
        g[3] = 0.5 * (d_corner[3] - d_corner[1]) * dh;
    }
    out.total = out.cls + out.l1 + out.giou;
    (out, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub assignment: Assignment,
    pub loss: LossBreakdown,
    /// Matched pairs, evaluated on the state the step was computed from.
    pub pairs: Vec<PairStat>,
    /// Euclidean norm of the parameter update.
    pub update_norm: f64,
}

/// One training step with an explicit logit perturbation (one entry per
/// prediction).
///
/// The perturbed logits are used for matching, for the loss and for the
/// gradient; the update is applied to the unperturbed parameters, so the
/// noise models stochasticity of a step rather than drift of the state.
pub fn train_step_with_noise(
    scene: &Scene,
    config: &ExperimentConfig,
    noise: &[f64],
) -> Result<(Scene, StepDiagnostics)> {
    scene.validate()?;
    if noise.len() != scene.n_pred() {
        return Err(Error::Shape(format!(
            "{} noise values for {} predictions",
            noise.len(),
            scene.n_pred()
        )));
    }
    let mut perturbed = scene.clone();
    for (pred, n) in perturbed.predictions.iter_mut().zip(noise) {
        pred.logit += n;
    }

    let assignment = match_scene(&perturbed, config)?;
    let plan = plan_step(&perturbed, &assignment, config)?;
    let (loss, grad) = objective_and_grad(&perturbed, &plan, config);

    let lr = config.learning_rate;
    let params: Vec<f64> = scene.params().iter().zip(&grad).map(|(x, g)| x - lr * g).collect();
    let update_norm = lr * grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    let pairs = assignment
        .pairs()
        .iter()
        .map(|&(p, g)| {
            let pred = &perturbed.predictions[p];
            PairStat {
                pred: p,
                gt: g,
                iou: iou(&pred.decode(), &perturbed.ground_truths[g].bbox),
                probability: pred.probability(),
            }
        })
        .collect();

    Ok((
        scene.with_params(&params),
        StepDiagnostics {
            assignment,
            loss,
            pairs,
            update_norm,
        },
    ))
}

/// One training step drawing the logit perturbation from `rng`.
pub fn train_step(scene: &Scene, config: &ExperimentConfig, rng: &mut impl Rng) -> Result<(Scene, StepDiagnostics)> {
    let noise = draw_noise(config.noise_std, scene.n_pred(), rng)?;
    train_step_with_noise(scene, config, &noise)
}

/// Always consumes `n` normal draws so that runs with different noise
/// levels stay aligned on the same random stream.
pub(crate) fn draw_noise(std: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument {
        arg: "noise_std",
        reason: e.to_string(),
    })?;
    Ok((0..n).map(|_| std * normal.sample(rng)).collect())
}
