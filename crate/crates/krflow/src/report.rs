//! Cross-run reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::RunSummary;
use crate::output::{parse_csv, write_json, write_text};
use crate::plot::{render, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub dir: PathBuf,
    pub preset: String,
    pub outcome: String,
    pub classification: String,
    pub alpha_hat: f64,
    pub alpha_threshold_passed: bool,
    pub rate: Option<f64>,
    pub monotonicity_violations: usize,
    pub max_increase_f: f64,
    pub max_increase_nu: f64,
    pub violated_monitors: Vec<String>,
    pub final_osc: f64,
    pub final_sup_h: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassGroups {
    pub all_bounded: Vec<PathBuf>,
    pub all_unbounded: Vec<PathBuf>,
    pub mixed: Vec<PathBuf>,
    pub inconclusive: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunEntry>,
    pub warnings: Vec<String>,
    pub groups: ClassGroups,
    /// Some run is AllBounded and another AllUnbounded.
    pub contrast: bool,
    pub any_mixed: bool,
    pub total_monotonicity_violations: usize,
}

fn load(dir: &Path) -> std::result::Result<(RunSummary, Vec<Vec<f64>>), String> {
    let summary_path = dir.join("summary.json");
    let csv_path = dir.join("run.csv");
    let summary_text = fs::read_to_string(&summary_path).map_err(|e| format!("{}: {e}", summary_path.display()))?;
    let summary: RunSummary =
        serde_json::from_str(&summary_text).map_err(|e| format!("{}: {e}", summary_path.display()))?;
    let csv = fs::read_to_string(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let rows = parse_csv(&csv).ok_or_else(|| format!("{}: unexpected CSV layout", csv_path.display()))?;
    Ok((summary, rows))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plot of F, ν, Osc and sup|h| against t from CSV rows.
pub fn plot_rows(title: &str, rows: &[Vec<f64>]) -> String {
    let col = |k: usize| -> Vec<f64> { rows.iter().map(|r| r[k]).collect() };
    let (t, f, nu, osc, sup_h) = (col(0), col(7), col(8), col(3), col(13));
    render(
        &escape(title),
        &[
            Series { title: "F", t: &t, y: &f },
            Series { title: "ν", t: &t, y: &nu },
            Series { title: "Osc φ", t: &t, y: &osc },
            Series { title: "sup |h|", t: &t, y: &sup_h },
        ],
    )
}

/// Aggregates the runs in `dirs`, in the given order. Directories with
/// missing or unreadable files produce a warning and are skipped. When
/// `plots` is set, one SVG per run is returned alongside.
pub fn build_report(dirs: &[PathBuf], plots: bool) -> (Report, Vec<(String, String)>) {
    let mut report = Report::default();
    let mut svgs = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let (summary, rows) = match load(dir) {
            Ok(v) => v,
            Err(w) => {
                report.warnings.push(w);
                continue;
            }
        };
        let group = match summary.classification.as_str() {
            "AllBounded" => &mut report.groups.all_bounded,
            "AllUnbounded" => &mut report.groups.all_unbounded,
            "Mixed" => &mut report.groups.mixed,
            _ => &mut report.groups.inconclusive,
        };
        group.push(dir.clone());
        let fin = &summary.final_snapshot;
        report.total_monotonicity_violations += summary.monotonicity.violations.len();
        report.runs.push(RunEntry {
            dir: dir.clone(),
            preset: summary.preset.clone(),
            outcome: summary.outcome.clone(),
            classification: summary.classification.clone(),
            alpha_hat: summary.alpha_hat,
            alpha_threshold_passed: summary.alpha_threshold_passed,
            rate: summary.rate,
            monotonicity_violations: summary.monotonicity.violations.len(),
            max_increase_f: summary.monotonicity.max_increase_f,
            max_increase_nu: summary.monotonicity.max_increase_nu,
            violated_monitors: summary.violated_monitors.clone(),
            final_osc: fin.osc,
            final_sup_h: fin.sup_h,
        });
        if plots {
            let title = format!("{} ({}) {}", summary.preset, summary.outcome, dir.display());
            svgs.push((format!("{k:03}_{}.svg", summary.preset), plot_rows(&title, &rows)));
        }
    }
    report.contrast = !report.groups.all_bounded.is_empty() && !report.groups.all_unbounded.is_empty();
    report.any_mixed = !report.groups.mixed.is_empty();
    (report, svgs)
}

/// Writes `report.json` and, when requested, `plots/*.svg` into `out`.
pub fn write_report(dirs: &[PathBuf], out: &Path, plots: bool) -> Result<Report> {
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let (report, svgs) = build_report(dirs, plots);
    write_json(&out.join("report.json"), &report)?;
    if !svgs.is_empty() {
        let pdir = out.join("plots");
        fs::create_dir_all(&pdir).map_err(|e| HarnessError::io(&pdir, e))?;
        for (name, svg) in svgs {
            write_text(&pdir.join(name), &svg)?;
        }
    }
    Ok(report)
}
