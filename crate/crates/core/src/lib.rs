//! Laboratory for the stability of long-horizon sequential execution.
//!
//! * [`kernel`]: transition kernels, total-variation contraction, advantage
//!   traces and exponential-decay fitting.
//! * [`twhsf`]: sparse long-horizon environments with aliased observations
//!   and landmark segmentation.
//! * [`scaling`]: episodes-to-success experiments on those environments.
//! * [`chain`]: the branch-free noisy chain with sticky traps and resets.
//! * [`governance`]: paired-and-cached exploration on room graphs.
//! * [`diagnostics`]: critical-region indicators, branching compensation and
//!   the phase boundary.

pub mod chain;
pub mod diagnostics;
pub mod error;
pub mod governance;
pub mod kernel;
pub mod scaling;
pub mod seed;
pub mod stats;
pub mod twhsf;

pub use error::{Error, Result};
