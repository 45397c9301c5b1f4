//! Numerical toolkit for sublinear-expectation calculus driven by a
//! volatility band `[sigma_low_sq, sigma_high_sq]`.
//!
//! The crate is organised around one backward PDE engine and the machinery
//! built on top of it:
//!
//! - [`generator`]: the sublinear generator family `G` and its variants
//!   (band-shrunk, symmetrized), with the convexity/monotonicity structure.
//! - [`gheat`]: explicit monotone finite-difference solver for
//!   `d_t u + G(d_xx u) + f = 0`, the single numerical kernel everything
//!   else reuses.
//! - [`cylinder`]: nonlinear expectations of functionals that read the path
//!   at finitely many times, via nested backward solves over parameter
//!   grids, plus conditional variants given a path prefix.
//! - [`pathcalc`]: piecewise-cylindrical path processes with left/right time
//!   derivative conventions and discrete Ito residuals.
//! - [`scenarios`]: volatility-scenario Monte Carlo (deterministic
//!   counter-based RNG), lower-bound expectation estimates and Sobolev-style
//!   norm estimators for path processes.
//! - [`gbsde`]: backward-SDE triples `(Y, Z, K)` extracted from solved
//!   surfaces, martingale-increment checks and the classical-Wiener special
//!   case.
//! - [`harness`]: end-to-end worked examples with closed-form values and
//!   dual-route consistency checks.
//!
//! Batch work (parameter-grid solves, Monte Carlo path sets) runs through
//! [`parallel`], which uses a work-stealing thread pool when the `parallel`
//! feature (default) is enabled and plain sequential loops otherwise; both
//! produce bitwise-identical results by fixed-shape pairwise reduction.

pub mod csvfmt;
pub mod cylinder;
pub mod error;
pub mod functional;
pub mod gbsde;
pub mod generator;
pub mod gheat;
pub mod grid;
pub mod harness;
pub mod parallel;
pub mod pathcalc;
pub mod quadrature;
pub mod rng;
pub mod scenarios;

pub use error::{GcalcError, Result};
pub use functional::{CylinderFunctional, StepProcess, TerminalFunction};
pub use generator::{EtaSource, EvalContext, SublinearGenerator};
pub use gheat::{solve_backward, MarkovDriver, SolveOptions, ValueSurface};
pub use grid::{default_domain, Interpolation, NumericsConfig, SpaceGrid, TimePartition};
