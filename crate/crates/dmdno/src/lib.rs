//! DMD-enhanced neural operator toolkit: finite-difference dataset
//! generation, dynamic mode decomposition, a Hadamard-fusion branch/trunk
//! operator network with hand-written reverse-mode gradients, and the
//! experiment plumbing tying them together.

pub mod config;
pub mod dmd;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pde;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
