//! Preset registry files.
//!
//! A manifest is TOML with one `[[preset]]` table per model:
//!
//! ```toml
//! [[preset]]
//! name = "cp1"
//! n = 1
//! points = [[-1], [0], [1]]
//! generators = [[[-1]]]
//! ke_expected = true
//! ke_weights = [1.0, 2.0, 1.0]
//! ```
//!
//! Points are integer tuples of length `n`, generators are `n × n` integer
//! matrices, and `ke_weights` (optional) lists one weight per point in the
//! order given.

use std::path::Path;

use krf_core::model::{build_model, IMat, Lattice, ReducedModel, IDENTITY};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PresetEntry {
    pub name: String,
    pub n: usize,
    pub points: Vec<Vec<i64>>,
    #[serde(default)]
    pub generators: Vec<Vec<Vec<i64>>>,
    #[serde(default)]
    pub ke_expected: bool,
    pub ke_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub preset: Vec<PresetEntry>,
}

impl Manifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Manifest> {
        toml::from_str(text).map_err(|e| HarnessError::format(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Manifest::parse(&text, path)
    }

    pub fn find(&self, name: &str) -> Option<&PresetEntry> {
        self.preset.iter().find(|p| p.name == name)
    }
}

impl PresetEntry {
    pub fn build(&self) -> Result<ReducedModel> {
        let bad = |msg: String| HarnessError::config("manifest", format!("{}: {msg}", self.name));
        let mut points: Vec<(Lattice, Option<f64>)> = Vec::with_capacity(self.points.len());
        for (k, p) in self.points.iter().enumerate() {
            if p.len() != self.n {
                return Err(bad(format!("point {p:?} does not have {} coordinates", self.n)));
            }
            let w = self.ke_weights.as_ref().and_then(|w| w.get(k).copied());
            points.push(([p[0], p.get(1).copied().unwrap_or(0)], w));
        }
        let mut generators: Vec<IMat> = Vec::with_capacity(self.generators.len());
        for g in &self.generators {
            if g.len() != self.n || g.iter().any(|row| row.len() != self.n) {
                return Err(bad(format!("generator {g:?} is not {0}×{0}", self.n)));
            }
            let mut m = IDENTITY;
            for (i, row) in g.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[i][j] = *v;
                }
            }
            generators.push(m);
        }
        points.sort_by_key(|p| p.0);
        let lattice: Vec<Lattice> = points.iter().map(|p| p.0).collect();
        let mut model = ReducedModel::new(&self.name, self.n, lattice, generators, self.ke_expected)?;
        if let Some(w) = &self.ke_weights {
            if w.len() != self.points.len() {
                return Err(bad("ke_weights must list one weight per point".into()));
            }
            model.set_ke_weights(points.iter().map(|p| p.1.unwrap_or(0.0)).collect())?;
        }
        Ok(model)
    }
}

/// Model for `name`, looked up in `manifest` first and then among the
/// built-in presets.
pub fn resolve_model(name: &str, manifest: Option<&Manifest>) -> Result<ReducedModel> {
    if let Some(entry) = manifest.and_then(|m| m.find(name)) {
        return entry.build();
    }
    build_model(name).map_err(|e| HarnessError::config("preset", e.to_string()))
}

/// The built-in registry written out in manifest form.
pub const BUILTIN_MANIFEST: &str = include_str!("../presets.toml");
