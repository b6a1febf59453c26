//! Python bindings. Boxes are `(x0, y0, x1, y1)` tuples or [`PyBBox`]
//! objects; structured results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use stablematch::fusion::{fusion_param_count as core_param_count, FusionKind};
use stablematch::gradcheck::{run_grad_check, GradCheckOptions};
use stablematch::io::{parse_config, parse_json, SceneFile};
use stablematch::loss::{F1Variant, F2Variant, LossConfig, PositiveExample, RescaleStrategy};
use stablematch::matching::{build_cost_matrix, hungarian as core_hungarian};
use stablematch::simlab::{run_experiment as core_run_experiment, ExperimentConfig, Mode};
use stablematch::stability::unstable_score as core_unstable_score;
use stablematch::{geometry, loss, matching, Assignment, BBox, CostMatrix, Error};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "BBox", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBBox(BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> PyResult<Self> {
        BBox::new(x0, y0, x1, y1).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> PyResult<Self> {
        BBox::from_center(cx, cy, w, h).map(Self).map_err(err)
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.0.corners();
        (a, b, c, d)
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.0.corners();
        format!("BBox({a}, {b}, {c}, {d})")
    }
}

#[derive(FromPyObject)]
enum BoxArg {
    Obj(PyBBox),
    Tuple((f64, f64, f64, f64)),
}

impl BoxArg {
    fn bbox(&self) -> PyResult<BBox> {
        match *self {
            BoxArg::Obj(b) => Ok(b.0),
            BoxArg::Tuple((a, b, c, d)) => BBox::new(a, b, c, d).map_err(err),
        }
    }
}

#[pyfunction]
fn iou(a: BoxArg, b: BoxArg) -> PyResult<f64> {
    Ok(geometry::iou(&a.bbox()?, &b.bbox()?))
}

#[pyfunction]
fn giou(a: BoxArg, b: BoxArg) -> PyResult<f64> {
    Ok(geometry::giou(&a.bbox()?, &b.bbox()?))
}

/// Indices of the kept `(box, probability)` candidates.
#[pyfunction]
#[pyo3(signature = (predictions, iou_threshold = geometry::DEFAULT_NMS_THRESHOLD))]
fn nms(predictions: Vec<(BoxArg, f64)>, iou_threshold: f64) -> PyResult<Vec<usize>> {
    let preds = predictions
        .iter()
        .map(|(b, p)| Ok((b.bbox()?, *p)))
        .collect::<PyResult<Vec<_>>>()?;
    geometry::nms(&preds, iou_threshold).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (positives, negatives, gamma = 2.0))]
fn focal_loss(positives: Vec<f64>, negatives: Vec<f64>, gamma: f64) -> f64 {
    loss::focal_loss(&positives, &negatives, gamma)
}

/// `positives` are `(p, s)` pairs.
#[pyfunction]
#[pyo3(signature = (positives, negatives, max_iou = None, gamma = 2.0, f1_variant = "ssq", rescale_strategy = "maxiou"))]
fn position_supervised_loss(
    positives: Vec<(f64, f64)>,
    negatives: Vec<f64>,
    max_iou: Option<f64>,
    gamma: f64,
    f1_variant: &str,
    rescale_strategy: &str,
) -> PyResult<f64> {
    let config = LossConfig {
        gamma,
        f1_variant: parse::<F1Variant>(f1_variant)?,
        rescale_strategy: parse::<RescaleStrategy>(rescale_strategy)?,
        ..LossConfig::default()
    };
    config.validate().map_err(err)?;
    let pos = positives
        .into_iter()
        .map(|(p, s)| PositiveExample::new(p, s))
        .collect::<stablematch::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(loss::position_supervised_loss(&pos, &negatives, max_iou, &config))
}

#[pyfunction]
#[pyo3(signature = (p, gamma = 2.0))]
fn cls_cost(p: f64, gamma: f64) -> f64 {
    matching::cls_cost(p, gamma)
}

#[pyfunction]
#[pyo3(signature = (p, s_prime, gamma = 2.0, f2_variant = "shalf"))]
fn position_modulated_cls_cost(p: f64, s_prime: f64, gamma: f64, f2_variant: &str) -> PyResult<f64> {
    let config = LossConfig {
        gamma,
        f2_variant: parse::<F2Variant>(f2_variant)?,
        ..LossConfig::default()
    };
    Ok(matching::position_modulated_cls_cost(p, s_prime, &config))
}

/// Minimum-cost assignment for a `n_pred × n_gt` cost matrix given as rows;
/// returns `(prediction, ground_truth)` pairs in ground-truth order.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    let c = CostMatrix::from_rows(&cost).map_err(err)?;
    Ok(core_hungarian(&c).map_err(err)?.pairs().to_vec())
}

#[pyfunction]
fn brute_force_assign(cost: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    let c = CostMatrix::from_rows(&cost).map_err(err)?;
    Ok(matching::brute_force_assign(&c).map_err(err)?.pairs().to_vec())
}

/// Matches a scene given as scene-file JSON text. Returns
/// `{"assignment": [...], "total_cost": float, "cost_matrix": [[...]]}`.
#[pyfunction]
#[pyo3(signature = (scene_json, modulated = true, config_json = None))]
fn match_scene<'py>(
    py: Python<'py>,
    scene_json: &str,
    modulated: bool,
    config_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let scene = SceneFile::from_json(scene_json).map_err(err)?;
    let config = match config_json {
        Some(text) => parse_config(text).map_err(err)?,
        None => ExperimentConfig::default(),
    };
    let cost = build_cost_matrix(
        &scene.predictions,
        &scene.ground_truths,
        &config.cost_weights,
        &config.loss_config,
        modulated,
    )
    .map_err(err)?;
    let assignment = core_hungarian(&cost).map_err(err)?;
    let rows: Vec<Vec<f64>> = (0..cost.n_pred()).map(|i| cost.row(i).to_vec()).collect();
    let out = PyDict::new(py);
    out.set_item("assignment", assignment.pairs().to_vec())?;
    out.set_item("total_cost", assignment.total_cost(&cost))?;
    out.set_item("cost_matrix", rows)?;
    Ok(out)
}

/// Percentage of ground truths whose matched prediction differs; the lists
/// give the matched prediction per ground truth.
#[pyfunction]
fn unstable_score(prev: Vec<usize>, curr: Vec<usize>) -> PyResult<f64> {
    let n = prev.len();
    let a = Assignment::from_gt_order(prev).map_err(err)?;
    let b = Assignment::from_gt_order(curr).map_err(err)?;
    core_unstable_score(&a, &b, n).map_err(err)
}

#[pyfunction]
fn fusion_param_count(kind: &str, layers: usize, dim: usize) -> PyResult<usize> {
    Ok(core_param_count(parse::<FusionKind>(kind)?, layers, dim))
}

/// Runs a seeded experiment and returns its summary as a dict. `config_json`
/// uses the experiment-config file format; `mode` overrides it.
#[pyfunction]
#[pyo3(signature = (n_seeds, mode = None, config_json = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    n_seeds: usize,
    mode: Option<&str>,
    config_json: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut config: ExperimentConfig = match config_json {
        Some(text) => parse_json(text).map_err(err)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = mode {
        config.mode = parse::<Mode>(mode)?;
    }
    let report = py.detach(|| core_run_experiment(&config, n_seeds)).map_err(err)?;
    to_py_json(py, &report.summary())
}

#[pyfunction]
#[pyo3(signature = (n_samples = 1000, seed = 0))]
fn grad_check<'py>(py: Python<'py>, n_samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = run_grad_check(&GradCheckOptions {
        n_samples,
        seed,
        corrupt: false,
    })
    .map_err(err)?;
    to_py_json(py, &report)
}

#[pymodule(name = "stablematch")]
fn stablematch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(giou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(position_supervised_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cls_cost, m)?)?;
    m.add_function(wrap_pyfunction!(position_modulated_cls_cost, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_assign, m)?)?;
    m.add_function(wrap_pyfunction!(match_scene, m)?)?;
    m.add_function(wrap_pyfunction!(unstable_score, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
