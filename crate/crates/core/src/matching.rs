//! Matching costs and optimal one-to-one assignment.
//!
//! Rows of a [`CostMatrix`] are predictions and columns are ground truths.
//! Every ground truth receives exactly one prediction; unmatched predictions
//! are negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_l1, giou, rescale_giou, BBox};
use crate::loss::{bce, clamp_prob, LossConfig};

/// Largest ground-truth count accepted by [`brute_force_assign`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Relative tolerance under which two assignment totals count as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w_cls: f64,
    pub w_bbox: f64,
    pub w_giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_cls: 2.0,
            w_bbox: 5.0,
            w_giou: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (arg, w) in [("w_cls", self.w_cls), ("w_bbox", self.w_bbox), ("w_giou", self.w_giou)] {
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

/// Dense `n_pred × n_gt` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_pred: usize,
    n_gt: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_pred: usize, n_gt: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_pred * n_gt {
            return Err(Error::Shape(format!(
                "{} values for a {n_pred}x{n_gt} cost matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument {
                arg: "values",
                reason: format!("non-finite cost {v}"),
            });
        }
        Ok(Self { n_pred, n_gt, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_gt = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_gt) {
            return Err(Error::Shape("ragged cost matrix rows".into()));
        }
        Self::new(rows.len(), n_gt, rows.concat())
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    pub fn get(&self, pred: usize, gt: usize) -> f64 {
        self.values[pred * self.n_gt + gt]
    }

    pub fn row(&self, pred: usize) -> &[f64] {
        &self.values[pred * self.n_gt..(pred + 1) * self.n_gt]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV with a header `pred,gt_0,...` and one line per prediction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pred");
        for j in 0..self.n_gt {
            out.push_str(&format!(",gt_{j}"));
        }
        out.push('\n');
        for i in 0..self.n_pred {
            out.push_str(&i.to_string());
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn check_assignable(&self) -> Result<()> {
        if self.n_pred < self.n_gt {
            return Err(Error::TooFewPredictions {
                n_pred: self.n_pred,
                n_gt: self.n_gt,
            });
        }
        Ok(())
    }
}

/// One-to-one map from ground truths to predictions.
///
/// `pairs` is sorted by ground-truth index and covers `0..n_gt`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// Builds an assignment from `(prediction, gt)` pairs. Each ground truth
    /// in `0..pairs.len()` must appear exactly once and no prediction twice.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_by_key(|&(_, g)| g);
        for (k, &(_, g)) in pairs.iter().enumerate() {
            if g != k {
                return Err(Error::AssignmentMismatch(format!(
                    "ground truths must be 0..{} each once",
                    pairs.len()
                )));
            }
        }
        let mut preds: Vec<usize> = pairs.iter().map(|&(p, _)| p).collect();
        preds.sort_unstable();
        if preds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::AssignmentMismatch("prediction used twice".into()));
        }
        Ok(Self { pairs })
    }

    /// `pred_for_gt[j]` is the prediction matched to ground truth `j`.
    pub fn from_gt_order(pred_for_gt: Vec<usize>) -> Result<Self> {
        Self::from_pairs(pred_for_gt.into_iter().enumerate().map(|(g, p)| (p, g)).collect())
    }

    /// `(prediction_index, gt_index)` pairs ordered by ground truth.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn n_gt(&self) -> usize {
        self.pairs.len()
    }

    pub fn pred_for_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.get(gt).map(|&(p, _)| p)
    }

    pub fn matched_predictions(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|&(p, _)| p)
    }

    /// Sum of the matched entries, accumulated in ground-truth order.
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().fold(0.0, |acc, &(p, g)| acc + c.get(p, g))
    }
}

/// `|1-q|^γ·BCE(q,1) - q^γ·BCE(1-q,1)` on a clamped probability.
fn focal_cost(q: f64, gamma: f64) -> f64 {
    let q = clamp_prob(q);
    (1.0 - q).abs().powf(gamma) * bce(q, 1.0) - q.powf(gamma) * bce(1.0 - q, 1.0)
}

/// Default classification cost.
pub fn cls_cost(p: f64, gamma: f64) -> f64 {
    focal_cost(p, gamma)
}

/// Classification cost with the probability modulated by `f₂(s')`, where
/// `s_prime` is the rescaled GIoU of the prediction/ground-truth pair.
pub fn position_modulated_cls_cost(p: f64, s_prime: f64, config: &LossConfig) -> f64 {
    focal_cost(p * config.f2_variant.eval(s_prime), config.gamma)
}

/// Weighted classification + L1 + GIoU cost for every prediction/ground-truth
/// pair. With `modulated` the classification term depends on the pair's
/// rescaled GIoU; otherwise it is constant along each row.
pub fn build_cost_matrix(
    predictions: &[Prediction],
    ground_truths: &[GroundTruth],
    weights: &CostWeights,
    config: &LossConfig,
    modulated: bool,
) -> Result<CostMatrix> {
    let (n_pred, n_gt) = (predictions.len(), ground_truths.len());
    if n_gt == 0 {
        return Err(Error::InvalidArgument {
            arg: "ground_truths",
            reason: "at least one ground truth required".into(),
        });
    }
    if n_pred < n_gt {
        return Err(Error::TooFewPredictions { n_pred, n_gt });
    }
    let mut values = Vec::with_capacity(n_pred * n_gt);
    for pred in predictions {
        let row_cls = cls_cost(pred.probability, config.gamma);
        for gt in ground_truths {
            let g = giou(&pred.bbox, &gt.bbox);
            let cls = if modulated {
                // giou is within [-1, 1] up to rounding
                let s_prime = rescale_giou(g.clamp(-1.0, 1.0))?;
                position_modulated_cls_cost(pred.probability, s_prime, config)
            } else {
                row_cls
            };
            values.push(weights.w_cls * cls + weights.w_bbox * box_l1(&pred.bbox, &gt.bbox) + weights.w_giou * -g);
        }
    }
    CostMatrix::new(n_pred, n_gt, values)
}

/// Shortest-augmenting-path Hungarian solver on the sub-matrix selected by
/// `gts` (rows of the assignment problem) and `preds` (columns). Returns the
/// position in `preds` assigned to each entry of `gts`.
fn solve_subproblem(c: &CostMatrix, gts: &[usize], preds: &[usize]) -> Vec<usize> {
    let n = gts.len();
    let m = preds.len();
    debug_assert!(n <= m);
    if n == 0 {
        return Vec::new();
    }
    let cost = |r: usize, col: usize| c.get(preds[col - 1], gts[r - 1]);

    // 1-based potentials; col_owner[0] is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0usize; n];
    for j in 1..=m {
        if col_owner[j] != 0 {
            result[col_owner[j] - 1] = j - 1;
        }
    }
    result
}

fn tied(value: f64, optimum: f64) -> bool {
    value <= optimum + TIE_TOL * optimum.abs().max(1.0)
}

/// Minimum-cost assignment covering every ground truth.
///
/// Among optimal assignments the one whose prediction sequence (in
/// ground-truth order) is lexicographically smallest is returned.
pub fn hungarian(c: &CostMatrix) -> Result<Assignment> {
    c.check_assignable()?;
    let n_gt = c.n_gt();
    let all_gts: Vec<usize> = (0..n_gt).collect();
    let all_preds: Vec<usize> = (0..c.n_pred()).collect();

    let mut witness: Vec<usize> = solve_subproblem(c, &all_gts, &all_preds)
        .into_iter()
        .map(|k| all_preds[k])
        .collect();
    let optimum = witness.iter().enumerate().fold(0.0, |acc, (g, &p)| acc + c.get(p, g));

    // Lexicographic refinement: fix ground truths in order, each to the
    // smallest prediction that still admits an optimal completion.
    let mut free_preds = all_preds;
    let mut fixed_cost = 0.0;
    for gt in 0..n_gt {
        let rest_gts: Vec<usize> = (gt + 1..n_gt).collect();
        let current = witness[gt];
        for &cand in free_preds.iter().take_while(|&&p| p < current) {
            let rest_preds: Vec<usize> = free_preds.iter().copied().filter(|&p| p != cand).collect();
            let sub = solve_subproblem(c, &rest_gts, &rest_preds);
            let rest_cost: f64 = sub.iter().zip(&rest_gts).map(|(&k, &g)| c.get(rest_preds[k], g)).sum();
            if tied(fixed_cost + c.get(cand, gt) + rest_cost, optimum) {
                witness[gt] = cand;
                for (&k, &g) in sub.iter().zip(&rest_gts) {
                    witness[g] = rest_preds[k];
                }
                break;
            }
        }
        fixed_cost += c.get(witness[gt], gt);
        free_preds.retain(|&p| p != witness[gt]);
    }

    Assignment::from_gt_order(witness)
}

/// Exhaustive search over all injections ground truth → prediction, with
/// the same tie-breaking rule as [`hungarian`].
pub fn brute_force_assign(c: &CostMatrix) -> Result<Assignment> {
    c.check_assignable()?;
    if c.n_gt() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLargeForBruteForce {
            n_gt: c.n_gt(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    fn visit(
        c: &CostMatrix,
        gt: usize,
        partial: f64,
        used: &mut [bool],
        chosen: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize], f64) -> bool,
    ) -> bool {
        if gt == c.n_gt() {
            return f(chosen, partial);
        }
        for p in 0..c.n_pred() {
            if used[p] {
                continue;
            }
            used[p] = true;
            chosen.push(p);
            let stop = visit(c, gt + 1, partial + c.get(p, gt), used, chosen, f);
            chosen.pop();
            used[p] = false;
            if stop {
                return true;
            }
        }
        false
    }

    let mut used = vec![false; c.n_pred()];
    let mut chosen = Vec::with_capacity(c.n_gt());

    let mut optimum = f64::INFINITY;
    visit(c, 0, 0.0, &mut used, &mut chosen, &mut |_, total| {
        optimum = optimum.min(total);
        false
    });

    // enumeration order is lexicographic, so the first tied injection wins
    let mut best = Vec::new();
    visit(c, 0, 0.0, &mut used, &mut chosen, &mut |sel, total| {
        if tied(total, optimum) {
            best = sel.to_vec();
            true
        } else {
            false
        }
    });
    Assignment::from_gt_order(best)
}
