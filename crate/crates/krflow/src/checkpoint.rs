//! Checkpoints and binary fields.
//!
//! A field file holds `n`, `N` (unsigned) and `L` (float) as little-endian
//! 64-bit values followed by the nodal values as little-endian `f64` in
//! grid order. A checkpoint directory holds the current `ψ` in that layout
//! (`field.bin`), the run history (`history.bin`) and a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use krf_core::flow::{Checkpoint, FlowState, Outcome, RawSnapshot, StepEnergy};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub n: u64,
    pub nodes_per_axis: u64,
    pub half_width: f64,
}

pub fn encode_field(header: FieldHeader, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * values.len());
    out.extend_from_slice(&header.n.to_le_bytes());
    out.extend_from_slice(&header.nodes_per_axis.to_le_bytes());
    out.extend_from_slice(&header.half_width.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Option<(FieldHeader, Vec<f64>)> {
    if bytes.len() < 24 || (bytes.len() - 24) % 8 != 0 {
        return None;
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("eight bytes") };
    let header = FieldHeader {
        n: u64::from_le_bytes(word(0)),
        nodes_per_axis: u64::from_le_bytes(word(8)),
        half_width: f64::from_le_bytes(word(16)),
    };
    let values = (24..bytes.len()).step_by(8).map(|i| f64::from_le_bytes(word(i))).collect();
    Some((header, values))
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub t: f64,
    pub step: usize,
    pub c0: f64,
    /// Gauge constant of the stored `ψ`.
    pub gauge: f64,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct History {
    increments: Vec<f64>,
    raw: Vec<RawSnapshot>,
    fields: Vec<Vec<f64>>,
    energies: Vec<StepEnergy>,
    finished: Option<(Outcome, String)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_checkpoint(dir: &Path, header: FieldHeader, cp: &Checkpoint, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let history = History {
        increments: cp.increments.clone(),
        raw: cp.raw.clone(),
        fields: cp.fields.clone(),
        energies: cp.energies.clone(),
        finished: cp.finished.clone(),
    };
    let hist = bincode::serialize(&history).map_err(|e| HarnessError::format(dir, e.to_string()))?;
    write_atomic(&dir.join("history.bin"), &hist)?;
    write_atomic(&dir.join("field.bin"), &encode_field(header, &cp.state.psi))?;
    let sidecar = Sidecar {
        t: cp.state.t,
        step: cp.state.step,
        c0: cp.c0,
        gauge: cp.state.a,
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| HarnessError::format(dir, e.to_string()))?;
    write_atomic(&dir.join("checkpoint.json"), &json)
}

/// Checkpoint in `dir`, checked against the expected grid and config hash.
pub fn read_checkpoint(dir: &Path, header: FieldHeader, config_hash: &str) -> Result<Checkpoint> {
    let side_path = dir.join("checkpoint.json");
    let sidecar: Sidecar = serde_json::from_slice(&read(&side_path)?)
        .map_err(|e| HarnessError::format(&side_path, e.to_string()))?;
    if sidecar.config_hash != config_hash {
        return Err(HarnessError::format(
            side_path,
            format!("config hash {} does not match {}", sidecar.config_hash, config_hash),
        ));
    }
    let field_path = dir.join("field.bin");
    let (h, psi) = decode_field(&read(&field_path)?)
        .ok_or_else(|| HarnessError::format(&field_path, "truncated field file"))?;
    if h != header {
        return Err(HarnessError::format(field_path, format!("grid {h:?} does not match {header:?}")));
    }
    let hist_path = dir.join("history.bin");
    let history: History = bincode::deserialize(&read(&hist_path)?)
        .map_err(|e| HarnessError::format(&hist_path, e.to_string()))?;
    Ok(Checkpoint {
        state: FlowState { step: sidecar.step, t: sidecar.t, psi, a: sidecar.gauge },
        c0: sidecar.c0,
        increments: history.increments,
        raw: history.raw,
        fields: history.fields,
        energies: history.energies,
        finished: history.finished,
    })
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoint")
}
