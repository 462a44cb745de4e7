//! CSV and JSON emission.

use std::fs;
use std::path::Path;

use krf_core::flow::FunctionalSnapshot;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str =
    "t,sup_phi,inf_phi,osc,I,J,F0,F,nu,int_phi_ref,int_negphi_ev,sup_phidot,sup_R,sup_h,sup_gradh,cp_proxy,vol_err";

/// Seventeen significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_row(s: &FunctionalSnapshot) -> String {
    [
        s.t, s.sup_phi, s.inf_phi, s.osc, s.i, s.j, s.f0, s.f, s.nu, s.int_phi_ref, s.int_negphi_ev,
        s.sup_phidot, s.sup_r, s.sup_h, s.sup_gradh, s.cp_proxy, s.vol_err,
    ]
    .iter()
    .map(|v| fmt_f64(*v))
    .collect::<Vec<_>>()
    .join(",")
}

pub fn csv_text(snapshots: &[FunctionalSnapshot]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in snapshots {
        out.push_str(&csv_row(s));
        out.push('\n');
    }
    out
}

/// Rows of a CSV written by [`csv_text`]; `None` on a header mismatch.
pub fn parse_csv(text: &str) -> Option<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    if lines.next()? != CSV_HEADER {
        return None;
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().ok()).collect::<Option<Vec<f64>>>())
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}
