//! Unstable score: the percentage of ground truths whose matched prediction
//! changes between two consecutive matchings (adjacent decoder layers, or
//! adjacent training steps in the simulation harness).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Assignment;

fn check_covers(a: &Assignment, n_gt: usize, which: &str) -> Result<()> {
    if a.n_gt() != n_gt {
        return Err(Error::AssignmentMismatch(format!(
            "{which} covers {} ground truths, expected {n_gt}",
            a.n_gt()
        )));
    }
    Ok(())
}

pub fn unstable_score(prev: &Assignment, curr: &Assignment, n_gt: usize) -> Result<f64> {
    check_covers(prev, n_gt, "previous assignment")?;
    check_covers(curr, n_gt, "current assignment")?;
    if n_gt == 0 {
        return Err(Error::AssignmentMismatch("no ground truths".into()));
    }
    let changed = prev
        .pairs()
        .iter()
        .zip(curr.pairs())
        .filter(|(a, b)| a.0 != b.0)
        .count();
    Ok(100.0 * changed as f64 / n_gt as f64)
}

/// Matchings of one image at successive layers. Index 0 is the initial
/// (encoder or proposal) matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAssignments {
    pub per_layer: Vec<Assignment>,
    pub n_gt: usize,
}

/// Score of layer `ℓ` (1-based) compares matchings `ℓ-1` and `ℓ`.
pub fn layerwise_unstable(layers: &LayerAssignments) -> Result<Vec<f64>> {
    if layers.per_layer.len() < 2 {
        return Err(Error::InvalidArgument {
            arg: "layers",
            reason: format!("need at least 2 matchings, got {}", layers.per_layer.len()),
        });
    }
    layers
        .per_layer
        .windows(2)
        .map(|w| unstable_score(&w[0], &w[1], layers.n_gt))
        .collect()
}

/// Element-wise mean of several equally long score series.
pub fn mean_scores(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::Shape("score series differ in length".into()));
    }
    let n = series.len() as f64;
    Ok((0..first.len())
        .map(|k| series.iter().map(|s| s[k]).sum::<f64>() / n)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub scene_id: u64,
    pub layer_or_step: usize,
    pub unstable_score: f64,
}

pub fn rows_to_csv(rows: &[StabilityRow]) -> String {
    let mut out = String::from("scene_id,layer_or_step,unstable_score\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.2}\n", r.scene_id, r.layer_or_step, r.unstable_score));
    }
    out
}
