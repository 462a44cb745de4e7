//! Experiment harness around `krf-core`: `key = value` configs, preset
//! manifests, single runs with checkpoints, parameter sweeps and reports.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod output;
pub mod plot;
pub mod report;
pub mod sweep;

pub use error::{HarnessError, Result};
