//! Error taxonomy shared by every module of the crate.
//!
//! Variants are grouped by how a front end should react: configuration
//! problems are user-fixable, CFL rejections carry the admissible step so the
//! caller can retry, divergence identifies the failing sweep level, and
//! verification failures embed the offending numbers.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum GcalcError {
    /// Invalid or inconsistent configuration (bad bounds, empty grids, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Explicit-scheme stability rejection. `dt` was requested, `admissible`
    /// is the largest stable step for the given grid and generator.
    #[error("CFL rejection: dt = {dt:.6e} exceeds admissible dt = {admissible:.6e}")]
    Cfl { dt: f64, admissible: f64 },

    /// A sweep produced a non-finite value; `level` is the time level index
    /// (counted from the terminal side) at which it was first detected.
    #[error("divergence: non-finite value at time level {level}")]
    Divergence { level: usize },

    /// An operation precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Tensor-grid recursion refused: the functional arity exceeds the
    /// configured cap; `cost` estimates the number of PDE solves required.
    #[error("cylinder arity {arity} exceeds cap {cap} (about {cost:.2e} PDE solves); raise max_cylinder_arity to force")]
    TensorBlowup { arity: usize, cap: usize, cost: f64 },

    /// A conditional evaluation lacks required path observations.
    #[error("missing path observations at times {0:?}")]
    MissingObservations(Vec<f64>),

    /// The requested mode is not defined for the given inputs (for example a
    /// weak-form decomposition with a second-derivative-dependent driver).
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// Quadrature refinement did not settle; the partial estimate is kept so
    /// diagnostics can report how far off it was.
    #[error("quadrature did not converge (partial estimate {partial:.9e})")]
    QuadratureDiverged { partial: f64 },

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A cross-checked identity failed beyond its statistical allowance.
    #[error("verification failure: {0}")]
    Verification(String),

    /// Stream or file output failed while emitting results.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GcalcError>;
