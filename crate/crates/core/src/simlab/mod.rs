//! Desk-scale training harness.
//!
//! Predictions are parameterized directly (box center, softplus width and
//! height, one logit each) and trained by plain gradient descent against the
//! matched ground truths. This isolates the interaction between matching and
//! classification supervision: under the default loss/cost pair the two
//! competing predictions of the A/B scene each get reinforced when matched,
//! under the stable pair only the well-localized one does.

mod experiment;
mod scene;
mod train;

pub use experiment::{
    initial_scene, run_experiment, run_scene, run_seed, ExperimentReport, ExperimentSummary, RunReport, StepRecord,
    BURN_IN,
};
pub use scene::{
    gen_scene, inverse_softplus, logit, make_ab_scenario, scene_from_predictions, sigmoid, softplus, PredParams, Scene,
    AB_GROUND_TRUTH, PARAMS_PER_PREDICTION,
};
pub use train::{
    match_scene, objective, objective_and_grad, plan_step, train_step, train_step_with_noise, ExperimentConfig,
    LossBreakdown, Mode, PairStat, Scenario, StepDiagnostics, StepPlan,
};
