//! `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional except
//! `preset`; unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use krf_core::flow::{policy_name, scheme_name, C0Policy, FlowConfig, Scheme};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::manifest::{resolve_model, Manifest};

/// Environment variable overriding `output_dir`.
pub const OUT_ENV: &str = "KRFLOW_OUT";

/// Documented keys, in serialization order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "model name: a built-in preset or one from `manifest`"),
    ("manifest", "optional TOML preset manifest, relative to the config file"),
    ("ke_reference", "use the registered Kähler–Einstein reference potential (false)"),
    ("half_width", "half width L of the domain (12 for n = 1, 14 for n = 2)"),
    ("nodes", "odd number N of nodes per axis (513 for n = 1, 113 for n = 2)"),
    ("tail_tolerance", "largest reference mass fraction allowed outside the domain (2e-4)"),
    ("dt", "time step (0.05)"),
    ("t_max", "final time (30)"),
    ("scheme", "imex or rk4 (imex)"),
    ("c0_policy", "bounded, zero, mean_h or bisect (bounded)"),
    ("symmetrize", "project onto the preset's symmetry group (true)"),
    ("seed", "perturbation seed (0)"),
    ("amplitude", "sup of the initial perturbation (0.2)"),
    ("bumps", "number of Gaussian bumps in the perturbation, at most 5 (3)"),
    ("convergence_tol", "sup|h| below which a run counts as converged (1e-3)"),
    ("divergence_osc_budget", "oscillation beyond which steady growth stops a run (1.5)"),
    ("snapshot_every", "time between snapshots and CSV rows (0.5)"),
    ("checkpoint_every", "steps between checkpoints, 0 for none (0)"),
    ("newton_tol", "Newton step tolerance of the implicit scheme (1e-10)"),
    ("bisect_probe", "probe horizon of the bisect policy (5)"),
    ("bisect_range", "search interval [-D, D] of the bisect policy (10)"),
    ("deltas", "comma-separated increasing δ grid in (0, 1.5] (0.05, 0.1, ..., 1.5)"),
    ("alpha_budget", "bound on the α-integral defining α̂ (1000)"),
    ("output_dir", "output directory, overridden by KRFLOW_OUT (out)"),
    ("resume", "optional checkpoint directory to resume from"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub manifest: Option<PathBuf>,
    pub ke_reference: bool,
    pub half_width: f64,
    pub nodes: usize,
    pub tail_tolerance: f64,
    pub flow: FlowConfig,
    pub output_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

pub fn default_grid(n: usize) -> (f64, usize) {
    if n == 1 {
        (12.0, 513)
    } else {
        (14.0, 113)
    }
}

impl ExperimentConfig {
    /// Documented defaults for `preset`.
    pub fn for_preset(preset: &str) -> Result<ExperimentConfig> {
        let model = resolve_model(preset, None)?;
        Ok(Self::with_dimension(preset, model.n))
    }

    fn with_dimension(preset: &str, n: usize) -> ExperimentConfig {
        let (half_width, nodes) = default_grid(n);
        ExperimentConfig {
            preset: preset.to_string(),
            manifest: None,
            ke_reference: false,
            half_width,
            nodes,
            tail_tolerance: 2e-4,
            flow: FlowConfig::default(),
            output_dir: PathBuf::from("out"),
            resume: None,
        }
    }

    pub fn load_manifest(&self) -> Result<Option<Manifest>> {
        self.manifest.as_deref().map(Manifest::load).transpose()
    }

    /// Text form listing every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let f = &self.flow;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("preset", self.preset.clone());
        if let Some(m) = &self.manifest {
            put("manifest", m.display().to_string());
        }
        put("ke_reference", self.ke_reference.to_string());
        put("half_width", self.half_width.to_string());
        put("nodes", self.nodes.to_string());
        put("tail_tolerance", self.tail_tolerance.to_string());
        put("dt", f.dt.to_string());
        put("t_max", f.t_max.to_string());
        put("scheme", scheme_name(f.scheme).into());
        put("c0_policy", policy_name(f.c0_policy).into());
        put("symmetrize", f.symmetrize.to_string());
        put("seed", f.seed.to_string());
        put("amplitude", f.amplitude.to_string());
        put("bumps", f.bumps.to_string());
        put("convergence_tol", f.convergence_tol.to_string());
        put("divergence_osc_budget", f.divergence_osc_budget.to_string());
        put("snapshot_every", f.snapshot_every.to_string());
        put("checkpoint_every", f.checkpoint_every.to_string());
        put("newton_tol", f.newton_tol.to_string());
        put("bisect_probe", f.bisect_probe.to_string());
        put("bisect_range", f.bisect_range.to_string());
        put("deltas", f.deltas.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "));
        put("alpha_budget", f.alpha_budget.to_string());
        put("output_dir", self.output_dir.display().to_string());
        if let Some(r) = &self.resume {
            put("resume", r.display().to_string());
        }
        out
    }

    /// Hash of everything that determines the computed trajectory; the
    /// output location, resume path and checkpoint cadence are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.resume = None;
        c.flow.checkpoint_every = 0;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory after applying the environment override.
    pub fn effective_output_dir(&self, env: Option<&str>) -> PathBuf {
        match env {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// Sets one key from its text value, with range checks.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.flow;
        match key {
            "preset" => self.preset = value.to_string(),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "ke_reference" => self.ke_reference = parse_bool(key, value)?,
            "half_width" => {
                self.half_width = parse_f64(key, value)?;
                check(key, self.half_width > 0.0 && self.half_width <= 30.0, "must lie in (0, 30]")?;
            }
            "nodes" => {
                self.nodes = parse_usize(key, value)?;
                check(key, self.nodes >= 9 && self.nodes % 2 == 1, "must be odd and at least 9")?;
            }
            "tail_tolerance" => {
                self.tail_tolerance = parse_f64(key, value)?;
                check(key, self.tail_tolerance > 0.0 && self.tail_tolerance < 1.0, "must lie in (0, 1)")?;
            }
            "dt" => {
                f.dt = parse_f64(key, value)?;
                check(key, f.dt > 0.0 && f.dt <= 1.0, "must lie in (0, 1]")?;
            }
            "t_max" => {
                f.t_max = parse_f64(key, value)?;
                check(key, f.t_max >= 0.0, "must be nonnegative")?;
            }
            "scheme" => {
                f.scheme = match value {
                    "imex" => Scheme::Imex,
                    "rk4" => Scheme::Rk4,
                    _ => return Err(HarnessError::config(key, format!("expected imex or rk4, got `{value}`"))),
                }
            }
            "c0_policy" => {
                f.c0_policy = match value {
                    "bounded" => C0Policy::Bounded,
                    "zero" => C0Policy::Zero,
                    "mean_h" => C0Policy::MeanH,
                    "bisect" => C0Policy::Bisect,
                    _ => {
                        return Err(HarnessError::config(
                            key,
                            format!("expected bounded, zero, mean_h or bisect, got `{value}`"),
                        ))
                    }
                }
            }
            "symmetrize" => f.symmetrize = parse_bool(key, value)?,
            "seed" => f.seed = value.parse().map_err(|_| HarnessError::config(key, format!("expected an unsigned integer, got `{value}`")))?,
            "amplitude" => {
                f.amplitude = parse_f64(key, value)?;
                check(key, f.amplitude >= 0.0, "must be nonnegative")?;
            }
            "bumps" => {
                f.bumps = parse_usize(key, value)?;
                check(key, f.bumps <= 5, "must be at most 5")?;
            }
            "convergence_tol" => f.convergence_tol = positive(key, value)?,
            "divergence_osc_budget" => f.divergence_osc_budget = positive(key, value)?,
            "snapshot_every" => f.snapshot_every = positive(key, value)?,
            "checkpoint_every" => f.checkpoint_every = parse_usize(key, value)?,
            "newton_tol" => f.newton_tol = positive(key, value)?,
            "bisect_probe" => f.bisect_probe = positive(key, value)?,
            "bisect_range" => f.bisect_range = positive(key, value)?,
            "deltas" => {
                let d: Vec<f64> = value
                    .split(',')
                    .map(|s| parse_f64(key, s.trim()))
                    .collect::<Result<_>>()?;
                let ok = !d.is_empty()
                    && d.windows(2).all(|w| w[1] > w[0])
                    && d.iter().all(|&x| x > 0.0 && x <= 1.5);
                check(key, ok, "must increase strictly within (0, 1.5]")?;
                f.deltas = d;
            }
            "alpha_budget" => f.alpha_budget = positive(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "resume" => self.resume = Some(PathBuf::from(value)),
            _ => return Err(HarnessError::config(key, "unknown key")),
        }
        Ok(())
    }
}

fn check(key: &str, ok: bool, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(key, message))
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| HarnessError::config(key, format!("expected a number, got `{value}`")))?;
    check(key, v.is_finite(), "must be finite")?;
    Ok(v)
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v = parse_f64(key, value)?;
    check(key, v > 0.0, "must be positive")?;
    Ok(v)
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| HarnessError::config(key, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HarnessError::config(key, format!("expected true or false, got `{value}`"))),
    }
}

/// Key–value pairs of a config text, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            HarnessError::config(line, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if seen.insert(k.to_string(), ()).is_some() {
            return Err(HarnessError::config(k, "repeated key"));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

/// Parses config text. Relative `manifest` and `resume` paths are taken
/// relative to `base`.
pub fn parse_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let pairs = parse_pairs(text)?;
    for (k, _) in &pairs {
        if !KEYS.iter().any(|(name, _)| name == k) {
            return Err(HarnessError::config(k, "unknown key"));
        }
    }
    let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let preset = get("preset").ok_or_else(|| HarnessError::config("preset", "missing"))?;
    let manifest = get("manifest").map(|m| base.join(m));
    let loaded = manifest.as_deref().map(Manifest::load).transpose()?;
    let model = resolve_model(preset, loaded.as_ref())?;
    let mut cfg = ExperimentConfig::with_dimension(preset, model.n);
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    cfg.manifest = manifest;
    cfg.resume = cfg.resume.map(|r| base.join(r));
    if cfg.ke_reference && !model.has_ke_reference() {
        return Err(HarnessError::config("ke_reference", format!("{preset} has no registered Kähler–Einstein reference")));
    }
    cfg.flow.validate().map_err(|e| HarnessError::config("flow", e.to_string()))?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_str(&text, path.parent().unwrap_or(Path::new(".")))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::with_dimension("cp1", 1)
    }
}
