//! Monte Carlo machinery for rank-one multiplicative perturbations of
//! unitary matrix models.
//!
//! The crate samples perturbed unitaries `U * A` (and their iid-phase
//! analogues `V D V* A`), extracts the spectral data that drives their
//! characteristic functions, and counts or locates zeros of those
//! functions inside disks with certified error control. On top of that
//! sit estimators for coefficient moments, tightness profiles, outlier
//! trajectories, and comparisons against a truncated Gaussian analytic
//! function limit.
//!
//! All randomness flows through [`sampling::Seed`]; every public sampler
//! is deterministic given its seed, independent of thread count.

// Force the link against the system OpenBLAS that ndarray-linalg uses.
extern crate openblas_src;

pub mod charfn;
pub mod dynamics;
pub mod error;
pub mod gaf;
pub mod models;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};

/// Complex scalar used throughout; `E|c|^2 = 1` for the standard
/// complex Gaussian convention, see [`sampling::complex_gaussian`].
pub type C64 = num_complex::Complex64;
