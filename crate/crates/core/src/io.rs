//! JSON scene files and experiment configuration files.
//!
//! A scene file looks like
//!
//! ```json
//! {
//!   "version": "1",
//!   "ground_truths": [{"box": [0.3, 0.3, 0.7, 0.7], "class_id": 0}],
//!   "predictions": [{"box": [0.35, 0.3, 0.75, 0.7], "probability": 0.2}]
//! }
//! ```
//!
//! Experiment configs mirror [`ExperimentConfig`]; every field is optional
//! and falls back to its default.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{GroundTruth, Prediction};
use crate::simlab::{run_experiment, ExperimentConfig, ExperimentReport, ExperimentSummary, Scenario, Scene};
use crate::stability::rows_to_csv;

pub const SCENE_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: String,
    pub ground_truths: Vec<GroundTruth>,
    pub predictions: Vec<Prediction>,
}

impl SceneFile {
    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_VERSION {
            return Err(Error::Format {
                field: "version".into(),
                message: format!("expected \"{SCENE_VERSION}\", got \"{}\"", self.version),
            });
        }
        if self.ground_truths.is_empty() {
            return Err(Error::Format {
                field: "ground_truths".into(),
                message: "at least one ground truth required".into(),
            });
        }
        for (k, p) in self.predictions.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(Error::Format {
                    field: format!("predictions[{k}].probability"),
                    message: format!("{} is outside [0, 1]", p.probability),
                });
            }
        }
        if self.predictions.len() < self.ground_truths.len() {
            return Err(Error::TooFewPredictions {
                n_pred: self.predictions.len(),
                n_gt: self.ground_truths.len(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = parse_json(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene files always serialize")
    }

    pub fn to_scene(&self) -> Result<Scene> {
        crate::simlab::scene_from_predictions(self.ground_truths.clone(), &self.predictions)
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            version: SCENE_VERSION.into(),
            ground_truths: scene.ground_truths.clone(),
            predictions: scene.decoded(),
        }
    }
}

/// Deserializes JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Format {
            field: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_scene(path: &Path) -> Result<SceneFile> {
    SceneFile::from_json(&read(path)?)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = parse_json(text)?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&read(path)?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbDemoOutput {
    pub summary: ExperimentSummary,
    /// Written files, trajectories by seed first, then `summary.json`.
    pub files: Vec<PathBuf>,
}

/// Runs the A/B experiment and writes `trajectory_seed<k>.csv` per seed plus
/// `summary.json` into `out_dir`.
pub fn write_ab_demo(config: &ExperimentConfig, n_seeds: usize, out_dir: &Path) -> Result<AbDemoOutput> {
    if config.scenario != Scenario::Ab {
        return Err(Error::InvalidArgument {
            arg: "scenario",
            reason: "ab-demo needs the A/B scenario".into(),
        });
    }
    let report = run_experiment(config, n_seeds)?;
    create_dir(out_dir)?;
    let mut files = Vec::with_capacity(report.runs.len() + 1);
    for run in &report.runs {
        let path = out_dir.join(format!("trajectory_seed{}.csv", run.seed));
        write(&path, &run.ab_trajectory_csv())?;
        files.push(path);
    }
    let summary = report.summary();
    let path = out_dir.join("summary.json");
    write(&path, &summary_json(&summary))?;
    files.push(path);
    Ok(AbDemoOutput { summary, files })
}

pub fn summary_json(summary: &ExperimentSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summaries always serialize");
    text.push('\n');
    text
}

/// Writes `stability.csv` for an experiment report and returns its path.
pub fn write_stability(report: &ExperimentReport, out_dir: &Path) -> Result<PathBuf> {
    create_dir(out_dir)?;
    let path = out_dir.join("stability.csv");
    write(&path, &rows_to_csv(&report.stability_rows()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{F1Variant, RescaleStrategy};
    use crate::simlab::Mode;

    const SCENE: &str = r#"{
        "version": "1",
        "ground_truths": [{"box": [0.3, 0.3, 0.7, 0.7], "class_id": 0}],
        "predictions": [
            {"box": [0.35, 0.3, 0.75, 0.7], "probability": 0.2},
            {"box": [0.2, 0.2, 0.6, 0.6], "probability": 0.8}
        ]
    }"#;

    #[test]
    fn parses_scene() {
        let f = SceneFile::from_json(SCENE).unwrap();
        assert_eq!(f.predictions.len(), 2);
        let scene = f.to_scene().unwrap();
        let back = SceneFile::from_scene(&scene);
        for (a, b) in f.predictions.iter().zip(&back.predictions) {
            assert!((a.probability - b.probability).abs() < 1e-12);
            for (x, y) in a.bbox.corners().iter().zip(b.bbox.corners()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors_name_the_field() {
        let bad = SCENE.replace("[0.2, 0.2, 0.6, 0.6]", "[0.6, 0.2, 0.2, 0.6]");
        let msg = SceneFile::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("predictions[1].box"), "{msg}");

        let bad = SCENE.replace("\"probability\": 0.8", "\"probability\": 1.8");
        let msg = SceneFile::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("predictions[1].probability"), "{msg}");

        let bad = SCENE.replace("\"class_id\": 0", "\"class_id\": \"cat\"");
        let msg = SceneFile::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("ground_truths[0].class_id"), "{msg}");

        let bad = SCENE.replace("\"version\": \"1\"", "\"version\": \"2\"");
        assert!(SceneFile::from_json(&bad).unwrap_err().to_string().contains("version"));

        assert!(SceneFile::from_json("{").is_err());
    }

    #[test]
    fn too_few_predictions() {
        let bad = r#"{"version": "1", "ground_truths": [{"box": [0,0,1,1], "class_id": 0}], "predictions": []}"#;
        assert!(matches!(
            SceneFile::from_json(bad),
            Err(Error::TooFewPredictions { .. })
        ));
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = parse_config(
            r#"{"mode": "default", "steps": 20, "loss_config": {"f1_variant": "expnorm", "rescale_strategy": "toone"}}"#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Default);
        assert_eq!(c.steps, 20);
        assert_eq!(c.loss_config.f1_variant, F1Variant::ExpNorm);
        assert_eq!(c.loss_config.rescale_strategy, RescaleStrategy::ToOne);
        assert_eq!(c.loss_config.gamma, 2.0);

        let msg = parse_config(r#"{"loss_config": {"f1_variant": "cubic"}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("loss_config.f1_variant"), "{msg}");
        assert!(parse_config(r#"{"steps": 0}"#).is_err());
        assert!(parse_config(r#"{"stepz": 3}"#).is_err());

        let msg = parse_config(r#"{"cost_weights": {"w_cls": 3.0}}"#).unwrap_err().to_string();
        assert!(msg.contains("cost_weight"), "{msg}");
        assert!(parse_config(r#"{"cost_weights": {"w_cls": 3.0}, "loss_config": {"cost_weight": 3.0}}"#).is_ok());
    }
}
