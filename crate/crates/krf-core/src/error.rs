use alloc::string::String;
use core::fmt;

/// Failures surfaced by the kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad input: unknown preset, out-of-range parameter, invalid manifest.
    Config(String),
    /// The truncated domain misses too much reference mass.
    DomainTooSmall { tail: f64, tolerance: f64 },
    /// A Hessian determinant lost positivity at the given node.
    NotAdmissible { node: usize, det: f64 },
    /// Time stepping broke down.
    Numerical { t: f64, reason: String },
    /// The two forms of the I functional disagree.
    Calibration { relative: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::DomainTooSmall { tail, tolerance } => {
                write!(f, "domain too small: tail mass {tail:.3e} exceeds {tolerance:.1e}")
            }
            Error::NotAdmissible { node, det } => {
                write!(f, "potential not admissible at node {node} (det = {det:.3e})")
            }
            Error::Numerical { t, reason } => write!(f, "numerical failure at t = {t}: {reason}"),
            Error::Calibration { relative } => {
                write!(f, "energy forms disagree (relative {relative:.3e})")
            }
        }
    }
}

impl core::error::Error for Error {}
