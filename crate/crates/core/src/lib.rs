//! Numerical laboratory for the incompressible Navier-Stokes equations on a
//! periodic box standing in for the whole space: mild solutions driven by the
//! Stokes semigroup, truncation to large balls with Bogovskii divergence
//! correction, the annulus fixed-point iteration that recovers a no-slip
//! solution, and a harness that fits the measured spacetime decay exponents
//! against the predicted ones.
//!
//! Module map:
//! - [`spectral`]: grids, transforms, Fourier-multiplier calculus, Leray
//!   projection, region-restricted norms, binary field dumps.
//! - [`kernels`]: closed-form and quadrature evaluation of the heat kernel
//!   and the kernels of `e^{-tA}P` and `grad e^{-tA}P`, with weighted-sup
//!   bound tables.
//! - [`bogovskii`]: the explicit integral right inverse of the divergence on
//!   star-shaped domains and patched annuli.
//! - [`truncation`]: the radial cutoff, the truncated-system forcings and the
//!   divergence-free assembly.
//! - [`solver`]: Stokes evolution, the whole-space mild solver, pressure
//!   recovery, the annulus corrector iteration and weighted norms.
//! - [`harness`]: parameter sweeps, log-log exponent fits, report emission,
//!   and the acceptance checks.

pub mod bogovskii;
pub mod harness;
pub mod kernels;
pub mod quad;
pub mod shape;
pub mod solver;
pub mod spectral;
pub mod sum;
pub mod truncation;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid error: {0}")]
    Grid(String),
    #[error("region error: {0}")]
    Region(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature failed to reach tolerance: {0}")]
    Quadrature(String),
    #[error("picard iteration failed to converge after {iterations} sweeps (last relative change {last_change:.3e})")]
    PicardDiverged { iterations: usize, last_change: f64 },
    #[error("solution norm grew past the blow-up guard ({norm:.3e} > {guard:.3e})")]
    BlowUp { norm: f64, guard: f64 },
    #[error("corrector iteration is not contracting (measured factor {factor:.3e})")]
    NonContraction { factor: f64 },
    #[error("trajectory mismatch: {0}")]
    Trajectory(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad field file: {0}")]
    FieldFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
