//! Simulator and verification harness for blow-up solutions of the 1D
//! semilinear wave equation with exponential source u_tt = u_xx + e^u.
//!
//! The crate is organized around six subsystems:
//!
//! - [`wavefield`]: grids, initial data, uniform-local norms, the d'Alembert
//!   wave group.
//! - [`solver`]: the characteristic-grid leapfrog integrator for the
//!   exponential and capped sources, with cone-variation diagnostics.
//! - [`picard`]: the Duhamel fixed-point solver used for cross-validation.
//! - [`geometry`]: blow-up curve estimation, Lipschitz certificates,
//!   non-characteristic cone tests and distance geometry.
//! - [`similarity`]: similarity-variable frames, the transformed-equation
//!   residual and the Lyapunov functional.
//! - [`verify`]: quantitative bound checks with measured constants and
//!   refinement studies.

pub mod analytic;
pub mod error;
pub mod geometry;
pub mod picard;
pub mod similarity;
pub mod solver;
pub mod verify;
pub mod wavefield;

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use solver::{SolveOutcome, Source, StopReason, Truncation};
pub use wavefield::{Grid, InitialData, Regularity, StatePair, WaveField};
