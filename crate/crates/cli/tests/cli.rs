use std::path::Path;
use std::process::{Command, Output};

use stablematch::io::SceneFile;
use stablematch::matching::{brute_force_assign, build_cost_matrix};
use stablematch::{CostWeights, LossConfig};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/ab_seed0.json");

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stable-match"));
    cmd.env_remove("STABLE_MATCH_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn match_golden_scene_is_deterministic() {
    let a = run(&["match", "--scene", GOLDEN, "--modulated"]);
    let b = run(&["match", "--scene", GOLDEN, "--modulated"]);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["assignment"].as_array().unwrap().len(), 1);
    assert!(v["total_cost"].is_f64());
}

#[test]
fn match_writes_cost_matrix_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["match", "--scene", GOLDEN, "--out-dir", dir.path().to_str().unwrap()]);
    let v = stdout_json(&out);
    let csv = std::fs::read_to_string(v["cost_matrix_csv_path"].as_str().unwrap()).unwrap();
    assert!(csv.starts_with("pred,gt_0\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(!csv.contains('\r'));
}

#[test]
fn match_agrees_with_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"version": "1",
        "ground_truths": [{"box": [0.1, 0.1, 0.4, 0.4], "class_id": 0}, {"box": [0.5, 0.5, 0.9, 0.9], "class_id": 1}],
        "predictions": [{"box": [0.52, 0.5, 0.9, 0.88], "probability": 0.3}, {"box": [0.1, 0.12, 0.42, 0.4], "probability": 0.6}]}"#;
    let path = dir.path().join("scene.json");
    std::fs::write(&path, text).unwrap();
    let scene = SceneFile::from_json(text).unwrap();
    for modulated in [false, true] {
        let mut args = vec!["match", "--scene", path.to_str().unwrap()];
        if modulated {
            args.push("--modulated");
        }
        let v = stdout_json(&run(&args));
        let cost = build_cost_matrix(
            &scene.predictions,
            &scene.ground_truths,
            &CostWeights::default(),
            &LossConfig::default(),
            modulated,
        )
        .unwrap();
        let expected: Vec<(usize, usize)> = brute_force_assign(&cost).unwrap().pairs().to_vec();
        let got: Vec<(usize, usize)> = serde_json::from_value(v["assignment"].clone()).unwrap();
        assert_eq!(got, expected);
    }
}

#[test]
fn malformed_scene_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"version": "1", "ground_truths": [{"box": [0, 0, 1, 1], "class_id": 0}], "predictions": [{"box": [0, 0, 1, 1], "probability": "high"}]}"#,
    )
    .unwrap();
    let out = run(&["match", "--scene", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("predictions[0].probability"));

    std::fs::write(&path, "{not json").unwrap();
    assert!(!run(&["match", "--scene", path.to_str().unwrap()]).status.success());
}

#[test]
fn too_few_predictions_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    std::fs::write(
        &path,
        r#"{"version": "1", "ground_truths": [{"box": [0, 0, 1, 1], "class_id": 0}, {"box": [0, 0, 0.5, 0.5], "class_id": 0}],
            "predictions": [{"box": [0, 0, 1, 1], "probability": 0.5}]}"#,
    )
    .unwrap();
    assert!(!run(&["match", "--scene", path.to_str().unwrap()]).status.success());
}

#[test]
fn ab_demo_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |dir: &Path| {
        run(&[
            "ab-demo",
            "--seeds",
            "4",
            "--mode",
            "default",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
    };
    let (oa, ob) = (args(a.path()), args(b.path()));
    assert_eq!(oa.stdout, ob.stdout);
    let files = read_all(a.path());
    assert_eq!(files, read_all(b.path()));
    assert_eq!(files.len(), 5);
    let csv = String::from_utf8(files[1].1.clone()).unwrap();
    assert!(csv.starts_with("step,matched_index,p_A,p_B,iou_A,iou_B,loss\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn ab_demo_noiseless_stable_has_no_flips() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"noise_std": 0.0, "steps": 150}"#).unwrap();
    let out = run(&[
        "ab-demo",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "5",
        "--mode",
        "stable",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["total_flips_post_burnin"], 0);
    assert_eq!(v["winner_histogram"]["0"], 5);
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"learning_rate": -1}"#).unwrap();
    let out = run(&[
        "ab-demo",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("STABLE_MATCH_SEED", "42")
        .args(["stability", "--seeds", "2", "--out-dir", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    stdout_json(&out);
    let csv = std::fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scene_id,layer_or_step,unstable_score"));
    assert!(lines.next().unwrap().starts_with("42,0,"));
    assert!(csv.lines().skip(1).any(|l| l.starts_with("43,")));
    for line in csv.lines().skip(1) {
        let score: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=100.0).contains(&score));
    }

    let bad = bin()
        .env("STABLE_MATCH_SEED", "forty-two")
        .args(["stability", "--seeds", "1", "--out-dir", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn noiseless_stable_stability_column_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"noise_std": 0.0, "steps": 100, "mode": "stable"}"#).unwrap();
    let out = run(&[
        "stability",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    stdout_json(&out);
    let csv = std::fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0.00")));
}

#[test]
fn grad_check_passes_and_corruption_fails() {
    let out = run(&["grad-check", "--samples", "200", "--seed", "3"]);
    let v = stdout_json(&out);
    assert_eq!(v["passed"], true);
    let kinds: Vec<&str> = v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    for kind in [
        "focal_positive",
        "supervised_positive",
        "negative",
        "step_default",
        "step_stable",
    ] {
        assert!(kinds.contains(&kind), "{kinds:?}");
    }
    assert!(v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e["max_rel_error"].as_f64().unwrap() < 1e-4));

    let corrupt = run(&["grad-check", "--samples", "50", "--corrupt"]);
    assert!(!corrupt.status.success());
}

#[test]
fn fuse_check_reports_shapes_and_counts() {
    let v = stdout_json(&run(&[
        "fuse-check",
        "--kind",
        "dense",
        "--layers",
        "6",
        "--dim",
        "8",
        "--tokens",
        "5",
    ]));
    assert_eq!(v["param_count"], v["expected_param_count"]);
    assert_eq!(v["param_count"], (2..=7).map(|k| k * 64 + 16).sum::<usize>());
    assert_eq!(v["shapes_preserved"], true);
    for kind in ["simple", "ulike", "u-like"] {
        let v = stdout_json(&run(&[
            "fuse-check",
            "--kind",
            kind,
            "--layers",
            "3",
            "--dim",
            "4",
            "--tokens",
            "2",
        ]));
        assert!(v["sites"]
            .as_array()
            .unwrap()
            .iter()
            .all(|s| s["tokens"] == 2 && s["dim"] == 4));
    }
    assert!(!run(&["fuse-check", "--kind", "sparse"]).status.success());
}
