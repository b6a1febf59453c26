use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use stablematch::fusion::{fuse, fusion_param_count, init_params, FeatureMap, FusionKind};
use stablematch::gradcheck::{run_grad_check, GradCheckOptions};
use stablematch::io::{load_config, load_scene, summary_json, write_ab_demo, write_stability};
use stablematch::matching::{build_cost_matrix, hungarian};
use stablematch::simlab::{run_experiment, ExperimentConfig, Mode};

const SEED_ENV: &str = "STABLE_MATCH_SEED";

#[derive(Parser)]
#[command(name = "stable-match", version, about = "Stable one-to-one matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match one scene and print the assignment.
    Match {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the position-modulated classification cost.
        #[arg(long)]
        modulated: bool,
        /// Also write the cost matrix as `cost_matrix.csv` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the A/B experiment; writes per-seed trajectories and a summary.
    AbDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "ab_demo_out")]
        out_dir: PathBuf,
    },
    /// Run an experiment and write per-step unstable scores.
    Stability {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "stability_out")]
        out_dir: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb every analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Report fused shapes and parameter counts for one topology.
    FuseCheck {
        #[arg(long)]
        kind: FusionKind,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn experiment_config(path: Option<&Path>, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = mode {
        config.mode = mode;
    }
    if let Ok(seed) = std::env::var(SEED_ENV) {
        config.seed = seed
            .parse()
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {seed:?}"))?;
    }
    Ok(config)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct MatchOutput {
    /// `[prediction, ground_truth]` pairs in ground-truth order.
    assignment: Vec<(usize, usize)>,
    total_cost: f64,
    modulated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_matrix_csv_path: Option<PathBuf>,
}

fn cmd_match(scene: &Path, config: Option<&Path>, modulated: bool, out_dir: Option<&Path>) -> Result<bool> {
    let scene = load_scene(scene)?;
    let config = experiment_config(config, None)?;
    let cost = build_cost_matrix(
        &scene.predictions,
        &scene.ground_truths,
        &config.cost_weights,
        &config.loss_config,
        modulated,
    )?;
    let assignment = hungarian(&cost)?;
    let cost_matrix_csv_path = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("cost_matrix.csv");
            std::fs::write(&path, cost.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            Some(path)
        }
        None => None,
    };
    print_json(&MatchOutput {
        assignment: assignment.pairs().to_vec(),
        total_cost: assignment.total_cost(&cost),
        modulated,
        cost_matrix_csv_path,
    })?;
    Ok(true)
}

fn cmd_ab_demo(config: Option<&Path>, seeds: usize, mode: Option<Mode>, out_dir: &Path) -> Result<bool> {
    let config = experiment_config(config, mode)?;
    let out = write_ab_demo(&config, seeds, out_dir)?;
    print!("{}", summary_json(&out.summary));
    Ok(true)
}

#[derive(Serialize)]
struct StabilityOutput {
    path: PathBuf,
    mode: Mode,
    seeds: usize,
    mean_unstable: f64,
    mean_post_burnin_unstable: f64,
}

fn cmd_stability(config: Option<&Path>, seeds: usize, mode: Option<Mode>, out_dir: &Path) -> Result<bool> {
    let config = experiment_config(config, mode)?;
    let report = run_experiment(&config, seeds)?;
    let path = write_stability(&report, out_dir)?;
    let summary = report.summary();
    print_json(&StabilityOutput {
        path,
        mode: config.mode,
        seeds,
        mean_unstable: summary.mean_unstable,
        mean_post_burnin_unstable: summary.mean_post_burnin_unstable,
    })?;
    Ok(true)
}

fn cmd_grad_check(samples: usize, seed: u64, corrupt: bool) -> Result<bool> {
    if samples == 0 {
        bail!("--samples must be >= 1");
    }
    let report = run_grad_check(&GradCheckOptions {
        n_samples: samples,
        seed,
        corrupt,
    })?;
    print_json(&report)?;
    Ok(report.passed)
}

#[derive(Serialize)]
struct SiteReport {
    in_width: usize,
    tokens: usize,
    dim: usize,
}

#[derive(Serialize)]
struct FuseOutput {
    kind: FusionKind,
    layers: usize,
    dim: usize,
    tokens: usize,
    sites: Vec<SiteReport>,
    param_count: usize,
    expected_param_count: usize,
    shapes_preserved: bool,
}

fn cmd_fuse_check(kind: FusionKind, layers: usize, dim: usize, tokens: usize, seed: u64) -> Result<bool> {
    if layers == 0 || dim == 0 || tokens == 0 {
        bail!("--layers, --dim and --tokens must be >= 1");
    }
    let backbone = FeatureMap::random(tokens, dim, seed)?;
    let encoder: Vec<FeatureMap> = (0..layers)
        .map(|l| FeatureMap::random(tokens, dim, seed.wrapping_add(1 + l as u64)))
        .collect::<stablematch::Result<_>>()?;
    let params = init_params(kind, layers, dim, seed);
    let fused = fuse(kind, &backbone, &encoder, &params)?;
    let sites: Vec<SiteReport> = params
        .iter()
        .zip(&fused)
        .map(|(p, m)| SiteReport {
            in_width: p.in_width(),
            tokens: m.tokens(),
            dim: m.dim(),
        })
        .collect();
    let shapes_preserved = sites.iter().all(|s| s.tokens == tokens && s.dim == dim);
    let param_count = params.iter().map(|p| p.param_count()).sum();
    let expected_param_count = fusion_param_count(kind, layers, dim);
    print_json(&FuseOutput {
        kind,
        layers,
        dim,
        tokens,
        sites,
        param_count,
        expected_param_count,
        shapes_preserved,
    })?;
    Ok(shapes_preserved && param_count == expected_param_count)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Match {
            scene,
            config,
            modulated,
            out_dir,
        } => cmd_match(&scene, config.as_deref(), modulated, out_dir.as_deref()),
        Command::AbDemo {
            config,
            seeds,
            mode,
            out_dir,
        } => cmd_ab_demo(config.as_deref(), seeds, mode, &out_dir),
        Command::Stability {
            config,
            seeds,
            mode,
            out_dir,
        } => cmd_stability(config.as_deref(), seeds, mode, &out_dir),
        Command::GradCheck { samples, seed, corrupt } => cmd_grad_check(samples, seed, corrupt),
        Command::FuseCheck {
            kind,
            layers,
            dim,
            tokens,
            seed,
        } => cmd_fuse_check(kind, layers, dim, tokens, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
