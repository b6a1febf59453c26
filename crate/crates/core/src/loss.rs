//! Classification losses for one-to-one matched detectors.
//!
//! Two losses share one positive-term kernel `|t - p|^γ · BCE(p, t)`:
//!
//! * the focal loss, where every positive has target `t = 1`;
//! * the position-supervised loss, where a positive's target is
//!   `t = f₁(s, p)` computed from its IoU `s` with the matched ground truth
//!   and rescaled over all positives of the same image.
//!
//! Negatives contribute `p^γ · BCE(p, 0)` in both. Because the focal loss is
//! evaluated through the same kernel with `t = 1.0`, the position-supervised
//! loss with `f₁ = 1` and no rescaling reproduces it bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-8;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Target function `f₁(s, p)` for positive examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Variant {
    /// `s^0.5`
    SHalf,
    /// `s`
    S,
    /// `s²`
    SSq,
    /// `s³`
    SCube,
    /// `s · p^0.25`
    SPQuarter,
    /// `s · p`
    SP,
    /// `s² · p`
    S2P,
    /// `(e^s - 1) / (e - 1)`
    ExpNorm,
    /// `sin(s·π/2)`
    SinHalfPi,
    /// `1`, the focal-loss baseline
    ConstOne,
}

impl F1Variant {
    pub const ALL: [F1Variant; 10] = [
        F1Variant::SHalf,
        F1Variant::S,
        F1Variant::SSq,
        F1Variant::SCube,
        F1Variant::SPQuarter,
        F1Variant::SP,
        F1Variant::S2P,
        F1Variant::ExpNorm,
        F1Variant::SinHalfPi,
        F1Variant::ConstOne,
    ];

    pub fn eval(self, s: f64, p: f64) -> f64 {
        match self {
            F1Variant::SHalf => s.sqrt(),
            F1Variant::S => s,
            F1Variant::SSq => s * s,
            F1Variant::SCube => s * s * s,
            F1Variant::SPQuarter => s * p.powf(0.25),
            F1Variant::SP => s * p,
            F1Variant::S2P => s * s * p,
            F1Variant::ExpNorm => s.exp_m1() / 1.0_f64.exp_m1(),
            F1Variant::SinHalfPi => (s * std::f64::consts::FRAC_PI_2).sin(),
            F1Variant::ConstOne => 1.0,
        }
    }
}

impl std::str::FromStr for F1Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| Error::UnknownVariant(s.to_owned()))
    }
}

/// Modulating function `f₂(s')` of the position-modulated matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F2Variant {
    ConstOne,
    /// `s^0.25`
    SQuarter,
    /// `s^0.5`
    SHalf,
    S,
    SSq,
}

impl F2Variant {
    pub const ALL: [F2Variant; 5] = [
        F2Variant::ConstOne,
        F2Variant::SQuarter,
        F2Variant::SHalf,
        F2Variant::S,
        F2Variant::SSq,
    ];

    pub fn eval(self, s: f64) -> f64 {
        match self {
            F2Variant::ConstOne => 1.0,
            F2Variant::SQuarter => s.sqrt().sqrt(),
            F2Variant::SHalf => s.sqrt(),
            F2Variant::S => s,
            F2Variant::SSq => s * s,
        }
    }
}

impl std::str::FromStr for F2Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| Error::UnknownVariant(s.to_owned()))
    }
}

/// How the f₁ targets of one image are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RescaleStrategy {
    /// Peak target equals the image's maximum prediction/ground-truth IoU.
    MaxIou,
    /// Peak target equals 1.
    ToOne,
    None,
}

impl std::str::FromStr for RescaleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| Error::UnknownVariant(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub f1_variant: F1Variant,
    pub rescale_strategy: RescaleStrategy,
    pub cls_loss_weight: f64,
    /// Classification weight of the matching cost. The cost matrix reads
    /// `CostWeights::w_cls`; experiment configs require the two to agree.
    pub cost_weight: f64,
    pub f2_variant: F2Variant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            f1_variant: F1Variant::SSq,
            rescale_strategy: RescaleStrategy::MaxIou,
            cls_loss_weight: 6.0,
            cost_weight: 2.0,
            f2_variant: F2Variant::SHalf,
        }
    }
}

impl LossConfig {
    /// Configuration under which the position-supervised loss and the
    /// position-modulated cost reduce to the focal loss and default cost.
    pub fn baseline() -> Self {
        Self {
            f1_variant: F1Variant::ConstOne,
            rescale_strategy: RescaleStrategy::None,
            f2_variant: F2Variant::ConstOne,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument {
                arg: "gamma",
                reason: format!("must be finite and >= 0, got {}", self.gamma),
            });
        }
        for (arg, w) in [
            ("cls_loss_weight", self.cls_loss_weight),
            ("cost_weight", self.cost_weight),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument {
                    arg,
                    reason: format!("must be finite and > 0, got {w}"),
                });
            }
        }
        Ok(())
    }
}

/// A positive example: predicted probability and the IoU with its matched
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveExample {
    pub p: f64,
    pub s: f64,
}

impl PositiveExample {
    pub fn new(p: f64, s: f64) -> Result<Self> {
        check_unit("p", p)?;
        check_unit("s", s)?;
        Ok(Self { p, s })
    }
}

/// Binary cross-entropy with a soft target.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// `|x|^γ` with `0^0 = 1`.
fn pow_abs(x: f64, gamma: f64) -> f64 {
    x.abs().powf(gamma)
}

/// `d/dx |x|^γ`. At `x = 0` this is 0 for `γ > 1`; for `γ <= 1` the
/// function is not differentiable there and 0 is returned.
fn pow_abs_grad(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 || x == 0.0 {
        0.0
    } else {
        gamma * x.abs().powf(gamma - 1.0) * x.signum()
    }
}

/// Positive term `|t - p|^γ · BCE(p, t)`.
pub fn positive_term(p: f64, target: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p);
    pow_abs(target - p, gamma) * bce(p, target)
}

/// Negative term `p^γ · BCE(p, 0)`.
pub fn negative_term(p: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p);
    p.powf(gamma) * bce(p, 0.0)
}

fn inside_clamp(p: f64) -> bool {
    (PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

/// `d/dp` of [`positive_term`] with the target held constant. Zero where the
/// probability clamp is active.
pub fn positive_term_grad(p: f64, target: f64, gamma: f64) -> f64 {
    if !inside_clamp(p) {
        return 0.0;
    }
    let d_bce = -target / p + (1.0 - target) / (1.0 - p);
    // d/dp |t - p|^γ = -(d/dx |x|^γ) at x = t - p
    -pow_abs_grad(target - p, gamma) * bce(p, target) + pow_abs(target - p, gamma) * d_bce
}

/// `d/dp` of [`negative_term`].
pub fn negative_term_grad(p: f64, gamma: f64) -> f64 {
    if !inside_clamp(p) {
        return 0.0;
    }
    let d_mod = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
    d_mod * bce(p, 0.0) + p.powf(gamma) / (1.0 - p)
}

/// Focal classification loss summed over positives (target 1) and
/// negatives (target 0).
pub fn focal_loss(positives: &[f64], negatives: &[f64], gamma: f64) -> f64 {
    let pos: f64 = positives.iter().map(|&p| positive_term(p, 1.0, gamma)).sum();
    let neg: f64 = negatives.iter().map(|&p| negative_term(p, gamma)).sum();
    pos + neg
}

pub fn f1_eval(variant: F1Variant, s: f64, p: f64) -> Result<f64> {
    check_unit("s", s)?;
    check_unit("p", p)?;
    Ok(variant.eval(s, p))
}

pub fn f2_eval(variant: F2Variant, s: f64) -> Result<f64> {
    check_unit("s", s)?;
    Ok(variant.eval(s))
}

/// Rescales the raw f₁ targets of one image so that their peak equals
/// `max_iou` ([`RescaleStrategy::MaxIou`]) or 1 ([`RescaleStrategy::ToOne`]).
/// An all-zero target set is returned unchanged.
pub fn rescale_positives(raw_targets: &[f64], max_iou: f64, strategy: RescaleStrategy) -> Vec<f64> {
    let peak = match strategy {
        RescaleStrategy::None => return raw_targets.to_vec(),
        RescaleStrategy::MaxIou => max_iou,
        RescaleStrategy::ToOne => 1.0,
    };
    let raw_max = raw_targets.iter().copied().fold(0.0_f64, f64::max);
    if raw_max <= 0.0 {
        return raw_targets.to_vec();
    }
    let scale = peak / raw_max;
    raw_targets
        .iter()
        .map(|&t| if t == raw_max { peak } else { t * scale })
        .collect()
}

/// Rescaled f₁ targets for one image's positives.
///
/// `max_iou` is the maximum IoU over every prediction/ground-truth pair of
/// the image, not only the matched ones.
pub fn positive_targets(positives: &[PositiveExample], max_iou: f64, config: &LossConfig) -> Vec<f64> {
    let raw: Vec<f64> = positives.iter().map(|e| config.f1_variant.eval(e.s, e.p)).collect();
    rescale_positives(&raw, max_iou, config.rescale_strategy)
}

/// Position-supervised classification loss over one image.
///
/// When `max_iou` is `None` it defaults to the largest positional metric
/// among the positives.
pub fn position_supervised_loss(
    positives: &[PositiveExample],
    negatives: &[f64],
    max_iou: Option<f64>,
    config: &LossConfig,
) -> f64 {
    let max_iou = max_iou.unwrap_or_else(|| positives.iter().map(|e| e.s).fold(0.0, f64::max));
    let targets = positive_targets(positives, max_iou, config);
    let pos: f64 = positives
        .iter()
        .zip(&targets)
        .map(|(e, &t)| positive_term(e.p, t, config.gamma))
        .sum();
    let neg: f64 = negatives.iter().map(|&p| negative_term(p, config.gamma)).sum();
    pos + neg
}

/// Which per-example loss term a gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTerm {
    /// Focal positive, target 1.
    FocalPositive,
    /// Position-supervised positive with an already rescaled target.
    SupervisedPositive { target: f64 },
    /// Negative example (same for both losses).
    Negative,
}

/// Analytic `d/dp` of a single example's loss term.
pub fn grad_loss_wrt_p(term: LossTerm, p: f64, gamma: f64) -> f64 {
    match term {
        LossTerm::FocalPositive => positive_term_grad(p, 1.0, gamma),
        LossTerm::SupervisedPositive { target } => positive_term_grad(p, target, gamma),
        LossTerm::Negative => negative_term_grad(p, gamma),
    }
}

/// Loss value of a single example's term, matching [`grad_loss_wrt_p`].
pub fn loss_term(term: LossTerm, p: f64, gamma: f64) -> f64 {
    match term {
        LossTerm::FocalPositive => positive_term(p, 1.0, gamma),
        LossTerm::SupervisedPositive { target } => positive_term(p, target, gamma),
        LossTerm::Negative => negative_term(p, gamma),
    }
}
