//! Single runs: set up, integrate with checkpoints, classify, write outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use krf_core::estimates::{classification_name, inequality_monitors, MonitorReport};
use krf_core::field::Setup;
use krf_core::flow::{outcome_name, policy_name, Flow, FunctionalSnapshot, Outcome, StepEnergy, Trajectory};
use krf_core::functionals::{delta_sweep_from, DeltaSweepResult};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_dir, read_checkpoint, write_checkpoint, FieldHeader};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::resolve_model;
use crate::output::{csv_text, write_json, write_text};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;
/// Configuration or I/O failure.
pub const EXIT_ERROR: i32 = 5;

pub fn exit_code(o: Outcome) -> i32 {
    match o {
        Outcome::ConvergedKe => EXIT_CONVERGED,
        Outcome::Diverged => EXIT_DIVERGED,
        Outcome::NumericalFailure => EXIT_NUMERICAL,
        Outcome::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Largest per-step increases of F and ν, and the steps exceeding
/// `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub tolerance: f64,
    pub max_increase_f: f64,
    pub max_increase_nu: f64,
    pub violations: Vec<usize>,
}

pub fn monotonicity(energies: &[StepEnergy], dt: f64) -> Monotonicity {
    let tolerance = 1e-8 + 10.0 * dt * dt;
    let mut max_f = f64::NEG_INFINITY;
    let mut max_nu = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for (k, w) in energies.windows(2).enumerate() {
        let df = w[1].f - w[0].f;
        let dnu = w[1].nu - w[0].nu;
        max_f = max_f.max(df);
        max_nu = max_nu.max(dnu);
        if df > tolerance || dnu > tolerance || df.is_nan() || dnu.is_nan() {
            violations.push(k + 1);
        }
    }
    Monotonicity { tolerance, max_increase_f: max_f, max_increase_nu: max_nu, violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: String,
    pub outcome: String,
    pub exit_code: i32,
    pub message: String,
    pub final_snapshot: FunctionalSnapshot,
    pub snapshots: usize,
    pub steps: usize,
    pub c0_policy: String,
    pub c0: f64,
    pub rate: Option<f64>,
    pub alpha_hat: f64,
    pub alpha_threshold_passed: bool,
    pub delta_sweep: DeltaSweepResult,
    pub classification: String,
    pub calibrated_constants: BTreeMap<String, f64>,
    pub violated_monitors: Vec<String>,
    pub monotonicity: Monotonicity,
    pub wall_time_s: f64,
    pub config_hash: String,
}

/// Everything a run produces, before it is written out.
pub struct RunResult {
    pub trajectory: Trajectory,
    pub monitors: MonitorReport,
    pub summary: RunSummary,
}

pub fn field_header(cfg: &ExperimentConfig, n: usize) -> FieldHeader {
    FieldHeader { n: n as u64, nodes_per_axis: cfg.nodes as u64, half_width: cfg.half_width }
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let manifest = cfg.load_manifest()?;
    let mut model = resolve_model(&cfg.preset, manifest.as_ref())?;
    if cfg.ke_reference {
        model = model.with_ke_reference()?;
    }
    Ok(Setup::new(model, cfg.half_width, cfg.nodes, cfg.tail_tolerance)?)
}

/// Integrates, writing checkpoints into `out/checkpoint` when enabled.
pub fn integrate(cfg: &ExperimentConfig, setup: &Setup, out: Option<&Path>) -> Result<Trajectory> {
    let hash = cfg.hash();
    let header = field_header(cfg, setup.n());
    let mut flow = match &cfg.resume {
        Some(dir) => Flow::resume(setup, cfg.flow.clone(), read_checkpoint(dir, header, &hash)?)?,
        None => Flow::new(setup, cfg.flow.clone())?,
    };
    let every = cfg.flow.checkpoint_every;
    while !flow.is_done() {
        flow.advance();
        if let Some(out) = out {
            if every > 0 && flow.state.step % every == 0 && !flow.is_done() {
                write_checkpoint(&checkpoint_dir(out), header, &flow.checkpoint(), &hash)?;
            }
        }
    }
    Ok(flow.finish())
}

/// Monitors, δ-sweep and summary for a finished trajectory.
pub fn analyze(cfg: &ExperimentConfig, setup: &Setup, trajectory: Trajectory, wall_time_s: f64) -> RunResult {
    let integrals: Vec<Vec<f64>> = trajectory.snapshots.iter().map(|s| s.alpha.clone()).collect();
    let sweep = delta_sweep_from(&integrals, &cfg.flow.deltas, cfg.flow.alpha_budget, setup.n());
    let monitors =
        inequality_monitors(&trajectory.snapshots, setup.n(), sweep.alpha_hat, cfg.flow.divergence_osc_budget);
    let last = trajectory.snapshots.last().cloned().expect("a trajectory has its initial snapshot");
    let summary = RunSummary {
        preset: cfg.preset.clone(),
        outcome: outcome_name(trajectory.outcome).to_string(),
        exit_code: exit_code(trajectory.outcome),
        message: trajectory.message.clone(),
        final_snapshot: last,
        snapshots: trajectory.snapshots.len(),
        steps: trajectory.energies.len().saturating_sub(1),
        c0_policy: policy_name(trajectory.c0_policy).to_string(),
        c0: trajectory.c0,
        rate: trajectory.rate,
        alpha_hat: sweep.alpha_hat,
        alpha_threshold_passed: sweep.threshold_passed,
        delta_sweep: sweep,
        classification: classification_name(monitors.equivalence.classification).to_string(),
        calibrated_constants: monitors.monitors.iter().map(|m| (m.name.to_string(), m.constant)).collect(),
        violated_monitors: monitors.violated(),
        monotonicity: monotonicity(&trajectory.energies, cfg.flow.dt),
        wall_time_s,
        config_hash: cfg.hash(),
    };
    RunResult { trajectory, monitors, summary }
}

/// Runs `cfg` and writes `run.csv`, `monitors.json`, `summary.json` and the
/// config echo `config.txt` into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let setup = build_setup(cfg)?;
    let trajectory = integrate(cfg, &setup, Some(out))?;
    let result = analyze(cfg, &setup, trajectory, start.elapsed().as_secs_f64());
    write_outputs(cfg, out, &result)?;
    Ok(result)
}

pub fn write_outputs(cfg: &ExperimentConfig, out: &Path, result: &RunResult) -> Result<()> {
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    write_text(&out.join("run.csv"), &csv_text(&result.trajectory.snapshots))?;
    write_json(&out.join("monitors.json"), &result.monitors)?;
    write_json(&out.join("summary.json"), &result.summary)
}

/// Output directory for `cfg`, honoring the environment override.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let env = std::env::var(crate::config::OUT_ENV).ok();
    cfg.effective_output_dir(env.as_deref())
}
