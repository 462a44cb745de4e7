//! Parameter sweeps: independent runs in worker threads and an index.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, EXIT_ERROR};
use crate::output::write_json;

/// Scalar keys that may be swept.
pub const SWEEPABLE: &[&str] = &[
    "dt",
    "t_max",
    "amplitude",
    "seed",
    "bumps",
    "half_width",
    "nodes",
    "tail_tolerance",
    "convergence_tol",
    "divergence_osc_budget",
    "snapshot_every",
    "newton_tol",
    "alpha_budget",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub dir: PathBuf,
    pub exit_code: i32,
    pub outcome: Option<String>,
    pub error: Option<String>,
}

/// Successive differences of a final-time quantity and the observed order
/// `log(e_k / e_{k+1}) / log(dt_k / dt_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub quantity: String,
    pub differences: Vec<f64>,
    pub orders: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub axis: String,
    pub values: Vec<String>,
    pub runs: Vec<SweepEntry>,
    pub order_table: Vec<OrderRow>,
}

/// Final-time data used for the order table.
struct Final {
    dt: f64,
    phi: Vec<f64>,
    f: f64,
    nu: f64,
}

/// Observed orders from values at successively refined steps.
pub fn observed_orders(dts: &[f64], differences: &[f64]) -> Vec<f64> {
    differences
        .windows(2)
        .zip(dts.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

fn order_table(finals: &[Final]) -> Vec<OrderRow> {
    if finals.len() < 3 {
        return Vec::new();
    }
    let dts: Vec<f64> = finals.iter().map(|f| f.dt).collect();
    let pairs = |d: &dyn Fn(&Final, &Final) -> f64| -> Vec<f64> { finals.windows(2).map(|w| d(&w[0], &w[1])).collect() };
    let rows = [
        ("phi", pairs(&|a, b| a.phi.iter().zip(&b.phi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))),
        ("F", pairs(&|a, b| (a.f - b.f).abs())),
        ("nu", pairs(&|a, b| (a.nu - b.nu).abs())),
    ];
    rows.into_iter()
        .map(|(name, diffs)| OrderRow {
            quantity: name.to_string(),
            orders: observed_orders(&dts[..dts.len() - 1], &diffs),
            differences: diffs,
        })
        .collect()
}

/// Runs `base` once per value of `axis`, each into `out/<axis>_<k>`, with
/// at most `threads` runs at a time. Failed runs are recorded and the sweep
/// continues. For `dt` with at least three strictly decreasing values an
/// order table is added.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String], out: &Path, threads: usize) -> Result<SweepIndex> {
    if !SWEEPABLE.contains(&axis) {
        return Err(HarnessError::config(axis, "not a sweepable parameter"));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = base.clone();
        c.set(axis, v)?;
        c.resume = None;
        configs.push(c);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(SweepEntry, Option<Final>)>>> = Mutex::new((0..values.len()).map(|_| None).collect());
    let workers = threads.max(1).min(values.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= configs.len() {
                    break;
                }
                let dir = out.join(format!("{axis}_{k}"));
                let entry = match run_experiment(&configs[k], &dir) {
                    Ok(r) => {
                        let fin = r.trajectory.fields.last().map(|phi| Final {
                            dt: configs[k].flow.dt,
                            phi: phi.clone(),
                            f: r.summary.final_snapshot.f,
                            nu: r.summary.final_snapshot.nu,
                        });
                        let e = SweepEntry {
                            value: values[k].clone(),
                            dir: dir.clone(),
                            exit_code: r.summary.exit_code,
                            outcome: Some(r.summary.outcome.clone()),
                            error: None,
                        };
                        (e, fin)
                    }
                    Err(err) => (
                        SweepEntry {
                            value: values[k].clone(),
                            dir: dir.clone(),
                            exit_code: EXIT_ERROR,
                            outcome: None,
                            error: Some(err.to_string()),
                        },
                        None,
                    ),
                };
                slots.lock().expect("lock")[k] = Some(entry);
            });
        }
    });
    let (runs, finals): (Vec<SweepEntry>, Vec<Option<Final>>) =
        slots.into_inner().expect("lock").into_iter().map(|e| e.expect("every run finished")).unzip();
    let decreasing = configs.windows(2).all(|w| w[1].flow.dt < w[0].flow.dt);
    let finals: Option<Vec<Final>> = finals.into_iter().collect();
    let order = match finals {
        Some(f) if axis == "dt" && decreasing => order_table(&f),
        _ => Vec::new(),
    };
    let index = SweepIndex {
        axis: axis.to_string(),
        values: values.to_vec(),
        runs,
        order_table: order,
    };
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    write_json(&out.join("index.json"), &index)?;
    Ok(index)
}
