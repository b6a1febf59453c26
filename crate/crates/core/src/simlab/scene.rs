use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::loss::{clamp_prob, PROB_EPS};
use crate::matching::{GroundTruth, Prediction};

/// Ground truth of the A/B scenario.
pub const AB_GROUND_TRUTH: [f64; 4] = [0.30, 0.30, 0.70, 0.70];

pub(crate) const SCENE_STREAM: u64 = 0;
pub(crate) const NOISE_STREAM: u64 = 1;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

/// Directly parameterized prediction: box center, pre-softplus width and
/// height, and a classification logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredParams {
    pub cx: f64,
    pub cy: f64,
    pub w_raw: f64,
    pub h_raw: f64,
    pub logit: f64,
}

pub const PARAMS_PER_PREDICTION: usize = 5;

impl PredParams {
    pub fn from_box(b: &BBox, probability: f64) -> Result<Self> {
        let [cx, cy, w, h] = b.to_center();
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidArgument {
                arg: "box",
                reason: "predictions need a positive width and height".into(),
            });
        }
        Ok(Self {
            cx,
            cy,
            w_raw: inverse_softplus(w),
            h_raw: inverse_softplus(h),
            logit: logit(probability),
        })
    }

    pub fn width(&self) -> f64 {
        softplus(self.w_raw)
    }

    pub fn height(&self) -> f64 {
        softplus(self.h_raw)
    }

    pub fn decode(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.width(), self.height()).expect("softplus keeps extents non-negative")
    }

    pub fn probability(&self) -> f64 {
        sigmoid(self.logit)
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_PREDICTION] {
        [self.cx, self.cy, self.w_raw, self.h_raw, self.logit]
    }

    pub fn from_array(a: [f64; PARAMS_PER_PREDICTION]) -> Self {
        Self {
            cx: a[0],
            cy: a[1],
            w_raw: a[2],
            h_raw: a[3],
            logit: a[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ground_truths: Vec<GroundTruth>,
    pub predictions: Vec<PredParams>,
}

impl Scene {
    pub fn new(ground_truths: Vec<GroundTruth>, predictions: Vec<PredParams>) -> Result<Self> {
        let scene = Self {
            ground_truths,
            predictions,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ground_truths.is_empty() {
            return Err(Error::InvalidArgument {
                arg: "ground_truths",
                reason: "a scene needs at least one ground truth".into(),
            });
        }
        if self.predictions.len() < self.ground_truths.len() {
            return Err(Error::TooFewPredictions {
                n_pred: self.predictions.len(),
                n_gt: self.ground_truths.len(),
            });
        }
        if self
            .predictions
            .iter()
            .flat_map(|p| p.to_array())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument {
                arg: "predictions",
                reason: "non-finite parameter".into(),
            });
        }
        Ok(())
    }

    pub fn n_gt(&self) -> usize {
        self.ground_truths.len()
    }

    pub fn n_pred(&self) -> usize {
        self.predictions.len()
    }

    /// Decoded predictions with probabilities.
    pub fn decoded(&self) -> Vec<Prediction> {
        self.predictions
            .iter()
            .map(|p| Prediction {
                bbox: p.decode(),
                probability: p.probability(),
            })
            .collect()
    }

    /// Largest IoU over every prediction/ground-truth pair.
    pub fn max_iou(&self) -> f64 {
        let boxes: Vec<BBox> = self.predictions.iter().map(PredParams::decode).collect();
        boxes
            .iter()
            .flat_map(|b| self.ground_truths.iter().map(move |g| iou(b, &g.bbox)))
            .fold(0.0, f64::max)
    }

    /// Flattened parameters, five per prediction.
    pub fn params(&self) -> Vec<f64> {
        self.predictions.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn with_params(&self, flat: &[f64]) -> Scene {
        assert_eq!(flat.len(), self.predictions.len() * PARAMS_PER_PREDICTION);
        Scene {
            ground_truths: self.ground_truths.clone(),
            predictions: flat
                .chunks_exact(PARAMS_PER_PREDICTION)
                .map(|c| PredParams::from_array([c[0], c[1], c[2], c[3], c[4]]))
                .collect(),
        }
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Translation along one axis giving IoU `target` between two equal squares
/// of side `side`.
fn axis_shift_for_iou(side: f64, target: f64) -> f64 {
    side * (1.0 - target) / (1.0 + target)
}

/// Equal diagonal translation giving IoU `target` between two equal squares.
fn diagonal_shift_for_iou(side: f64, target: f64) -> f64 {
    side * (1.0 - (2.0 * target / (1.0 + target)).sqrt())
}

/// The two-prediction scenario: prediction 0 ("A") overlaps the ground truth
/// well but has a low probability, prediction 1 ("B") is the opposite.
///
/// A is the ground truth shifted right to IoU ≈ 0.7 with p ≈ 0.2; B is shifted
/// diagonally towards the lower-left to IoU ≈ 0.2 with p ≈ 0.8. The seed
/// jitters each of the four quantities by at most ±0.03.
pub fn make_ab_scenario(seed: u64) -> Scene {
    let mut rng = rng_for(seed, SCENE_STREAM);
    let mut jitter = |centre: f64| centre + rng.random_range(-0.03..=0.03);
    let iou_a = jitter(0.7);
    let p_a = jitter(0.2);
    let iou_b = jitter(0.2);
    let p_b = jitter(0.8);

    let [x0, y0, x1, y1] = AB_GROUND_TRUTH;
    let gt = BBox::new(x0, y0, x1, y1).expect("constant box");
    let side = gt.width();
    let a = gt.translate(axis_shift_for_iou(side, iou_a), 0.0);
    let d = diagonal_shift_for_iou(side, iou_b);
    let b = gt.translate(-d, -d);

    Scene {
        ground_truths: vec![GroundTruth { bbox: gt, class_id: 0 }],
        predictions: vec![
            PredParams::from_box(&a, p_a).expect("positive extent"),
            PredParams::from_box(&b, p_b).expect("positive extent"),
        ],
    }
}

/// Random scene in the unit square: one perturbed copy per ground truth plus
/// distractors (loose copies of random ground truths or free boxes), in
/// shuffled order.
pub fn gen_scene(seed: u64, n_gt: usize, n_pred: usize) -> Result<Scene> {
    if n_gt == 0 || n_pred < n_gt {
        return Err(Error::InvalidArgument {
            arg: "n_gt/n_pred",
            reason: format!("need n_pred >= n_gt >= 1, got n_gt={n_gt}, n_pred={n_pred}"),
        });
    }
    let mut rng = rng_for(seed, SCENE_STREAM);

    let ground_truths: Vec<GroundTruth> = (0..n_gt)
        .map(|_| {
            let w = rng.random_range(0.1..0.35);
            let h = rng.random_range(0.1..0.35);
            let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
            GroundTruth {
                bbox: BBox::from_center(cx, cy, w, h).expect("positive extent"),
                class_id: 0,
            }
        })
        .collect();

    let mut predictions = Vec::with_capacity(n_pred);
    for k in 0..n_pred {
        let (spread, free) = if k < n_gt {
            (0.25, false)
        } else {
            (0.6, rng.random_bool(0.3))
        };
        let [cx, cy, w, h] = if free {
            let w = rng.random_range(0.05..0.4);
            let h = rng.random_range(0.05..0.4);
            [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), w, h]
        } else {
            let gt = &ground_truths[if k < n_gt { k } else { rng.random_range(0..n_gt) }];
            let [gx, gy, gw, gh] = gt.bbox.to_center();
            [
                gx + gw * rng.random_range(-spread..spread),
                gy + gh * rng.random_range(-spread..spread),
                gw * rng.random_range(-spread..spread).exp(),
                gh * rng.random_range(-spread..spread).exp(),
            ]
        };
        let p = rng.random_range(0.05..0.95);
        predictions.push(PredParams {
            cx,
            cy,
            w_raw: inverse_softplus(w),
            h_raw: inverse_softplus(h),
            logit: logit(p),
        });
    }
    // Fisher-Yates so that prediction order carries no information
    for i in (1..predictions.len()).rev() {
        let j = rng.random_range(0..=i);
        predictions.swap(i, j);
    }

    Scene::new(ground_truths, predictions)
}

/// Builds a scene from decoded predictions (box + probability).
pub fn scene_from_predictions(ground_truths: Vec<GroundTruth>, predictions: &[Prediction]) -> Result<Scene> {
    let params = predictions
        .iter()
        .map(|p| {
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(Error::OutOfRange {
                    name: "probability",
                    value: p.probability,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            PredParams::from_box(&p.bbox, p.probability.clamp(PROB_EPS, 1.0 - PROB_EPS))
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::new(ground_truths, params)
}
