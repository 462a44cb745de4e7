//! Numerical kernel for the normalized Kähler–Ricci flow on toric Fano
//! models, reduced to real Monge–Ampère equations in logarithmic coordinates.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command line and plotting live in the companion `krflow` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimates;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod model;
pub mod reference;
pub mod stats;

pub use error::{Error, Result};
