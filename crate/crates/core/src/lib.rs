//! Numerical laboratory for horizontal-like holomorphic maps on product
//! domains `D = M × N ⊂ C^p × C^(k-p)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: domains with nested shells, sampling, Bowen metric.
//! * [`maps`]: Hénon-type maps, regular automorphisms, products, perturbations.
//! * [`structure`]: sampled horizontal-like certificates and the main degree.
//! * [`green`]: escape-rate Green functions with calibrated error bounds.
//! * [`currents`]: potential grids for `k = 2` and the normalized transport operators.
//! * [`equilibrium`]: mixed Monge–Ampère measures and plurisubharmonic probes.
//! * [`ergodic`]: Lyapunov exponents, entropy, correlation decay.
//! * [`degrees`]: volume growth of parameterized discs.
//! * [`experiments`]: config-driven orchestration producing [`report::ExperimentReport`]s.
//!
//! Every stochastic routine takes an explicit 64-bit seed and derives one
//! independent stream per work item, so results do not depend on the number
//! of worker threads.

pub mod config;
pub mod currents;
pub mod degrees;
pub mod equilibrium;
pub mod ergodic;
pub mod experiments;
pub mod fit;
pub mod geometry;
pub mod green;
pub mod maps;
pub mod observables;
pub mod par;
pub mod report;
pub mod rng;
pub mod structure;
pub mod svg;

pub use geometry::{ComplexVec, Domain, Shell};
pub use maps::MapSpec;
pub use num_complex::Complex64 as C64;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("newton inverse did not converge (residual {residual:.3e})")]
    NewtonFailure { residual: f64 },
    #[error("argument principle failed: {0}")]
    Quadrature(String),
    #[error("grid resolution: {0}")]
    Resolution(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
