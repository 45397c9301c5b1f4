//! Payoff-side types: terminal functions, cylinder functionals and
//! piecewise-constant (step) processes on a partition.

use std::sync::Arc;

use crate::error::{GcalcError, Result};
use crate::grid::{SpaceGrid, TimePartition};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Vector = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal condition phi with a declared polynomial growth class
/// |phi(x)| <= coeff * (1 + |x|^degree).
#[derive(Clone)]
pub struct TerminalFunction {
    f: Scalar,
    growth_degree: u32,
    growth_coeff: f64,
    breakpoints: Vec<f64>,
}

impl std::fmt::Debug for TerminalFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalFunction")
            .field("growth_degree", &self.growth_degree)
            .field("growth_coeff", &self.growth_coeff)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

impl TerminalFunction {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, growth_degree: u32, growth_coeff: f64) -> Self {
        Self {
            f: Arc::new(f),
            growth_degree,
            growth_coeff,
            breakpoints: Vec::new(),
        }
    }

    /// Declare the locations where phi is not smooth (kinks, jumps in a
    /// derivative). Quadrature-based references split their integration
    /// domains there; the list must be strictly increasing.
    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        debug_assert!(breakpoints.windows(2).all(|w| w[0] < w[1]));
        self.breakpoints = breakpoints;
        self
    }

    /// Known non-smooth points, ascending (empty for smooth functions).
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn growth_degree(&self) -> u32 {
        self.growth_degree
    }

    pub fn growth_coeff(&self) -> f64 {
        self.growth_coeff
    }

    /// Spot-check the declared growth bound on the working grid. Truncation
    /// error outside the grid is a reporting concern, not a hard failure, so
    /// only on-grid violations are errors.
    pub fn check_growth_on(&self, grid: &SpaceGrid) -> Result<()> {
        for i in 0..grid.n_nodes() {
            let x = grid.node(i);
            let bound = self.growth_coeff * (1.0 + x.abs().powi(self.growth_degree as i32));
            let v = self.eval(x);
            if !v.is_finite() || v.abs() > bound * (1.0 + 1e-9) {
                return Err(GcalcError::Precondition(format!(
                    "terminal value {v} at x = {x} breaks declared growth bound {bound}"
                )));
            }
        }
        Ok(())
    }

    /// Polynomial `coeffs[0] + coeffs[1] x + ...` with growth derived from
    /// its coefficients.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c: Vec<f64> = coeffs.to_vec();
        let degree = c
            .iter()
            .rposition(|&v| v != 0.0)
            .unwrap_or(0) as u32;
        let coeff_sum: f64 = c.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        Self::new(
            move |x| {
                let mut acc = 0.0;
                for &ck in c.iter().rev() {
                    acc = acc * x + ck;
                }
                acc
            },
            degree,
            coeff_sum,
        )
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, 0, c.abs().max(1.0))
    }

    pub fn cosine() -> Self {
        Self::new(|x| x.cos(), 0, 1.0)
    }

    pub fn sine() -> Self {
        Self::new(|x| x.sin(), 0, 1.0)
    }

    /// Call payoff `(x - strike)^+`.
    pub fn call(strike: f64) -> Self {
        Self::new(move |x| (x - strike).max(0.0), 1, 1.0 + strike.abs())
            .with_breakpoints(vec![strike])
    }

    /// Put payoff `(strike - x)^+`.
    pub fn put(strike: f64) -> Self {
        Self::new(move |x| (strike - x).max(0.0), 1, 1.0 + strike.abs())
            .with_breakpoints(vec![strike])
    }

    /// Symmetric butterfly centered at `center` with the given `half` width:
    /// `(half - |x - center|)^+`.
    pub fn butterfly(center: f64, half: f64) -> Self {
        Self::new(move |x| (half - (x - center).abs()).max(0.0), 0, half.abs().max(1.0))
            .with_breakpoints(vec![center - half.abs(), center, center + half.abs()])
    }
}

/// Functional of finitely many path values, `xi = phi(w(t_1), ..., w(t_n))`.
#[derive(Clone)]
pub struct CylinderFunctional {
    times: Vec<f64>,
    phi: Vector,
    growth_degree: u32,
    growth_coeff: f64,
}

impl std::fmt::Debug for CylinderFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylinderFunctional")
            .field("times", &self.times)
            .field("growth_degree", &self.growth_degree)
            .finish_non_exhaustive()
    }
}

impl CylinderFunctional {
    /// `times` must be strictly increasing and strictly positive.
    pub fn new(
        times: Vec<f64>,
        phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        growth_degree: u32,
        growth_coeff: f64,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(GcalcError::Config("cylinder functional needs at least one time".into()));
        }
        if times[0] <= 0.0 {
            return Err(GcalcError::Config(format!(
                "cylinder times must be strictly positive, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1].is_finite()) || w[1] <= w[0] {
                return Err(GcalcError::Config(format!(
                    "cylinder times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            times,
            phi: Arc::new(phi),
            growth_degree,
            growth_coeff,
        })
    }

    /// Single-time functional `phi(w(t))` from a terminal function.
    pub fn from_terminal(t: f64, terminal: &TerminalFunction) -> Result<Self> {
        let term = terminal.clone();
        Self::new(
            vec![t],
            move |xs| term.eval(xs[0]),
            terminal.growth_degree(),
            terminal.growth_coeff(),
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn arity(&self) -> usize {
        self.times.len()
    }

    /// Final monitoring time, which is the natural horizon of the functional.
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    #[inline]
    pub fn eval(&self, xs: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), self.arity());
        (self.phi)(xs)
    }

    pub fn growth_degree(&self) -> u32 {
        self.growth_degree
    }

    pub fn growth_coeff(&self) -> f64 {
        self.growth_coeff
    }

    /// Pointwise negation (same monitoring times).
    pub fn negate(&self) -> Self {
        let phi = self.phi.clone();
        Self {
            times: self.times.clone(),
            phi: Arc::new(move |xs| -(phi)(xs)),
            growth_degree: self.growth_degree,
            growth_coeff: self.growth_coeff,
        }
    }

    /// Pointwise scaling by `lambda`.
    pub fn scale(&self, lambda: f64) -> Self {
        let phi = self.phi.clone();
        Self {
            times: self.times.clone(),
            phi: Arc::new(move |xs| lambda * (phi)(xs)),
            growth_degree: self.growth_degree,
            growth_coeff: self.growth_coeff * lambda.abs().max(1.0),
        }
    }

    /// Pointwise sum; both functionals must share their monitoring times.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.times != other.times {
            return Err(GcalcError::Precondition(
                "cylinder functionals can only be added on identical time sets".into(),
            ));
        }
        let a = self.phi.clone();
        let b = other.phi.clone();
        Ok(Self {
            times: self.times.clone(),
            phi: Arc::new(move |xs| (a)(xs) + (b)(xs)),
            growth_degree: self.growth_degree.max(other.growth_degree),
            growth_coeff: self.growth_coeff + other.growth_coeff,
        })
    }

    /// Shift a constant onto the functional.
    pub fn add_constant(&self, c: f64) -> Self {
        let phi = self.phi.clone();
        Self {
            times: self.times.clone(),
            phi: Arc::new(move |xs| (phi)(xs) + c),
            growth_degree: self.growth_degree,
            growth_coeff: self.growth_coeff + c.abs(),
        }
    }
}

/// Piecewise-constant process on a partition: on `(t_k, t_{k+1}]` its value
/// is `coeffs[k](w(t_1), ..., w(t_k))`, a bounded functional of the path
/// values observed up to the interval's left endpoint.
#[derive(Clone)]
pub struct StepProcess {
    partition: TimePartition,
    coeffs: Vec<Vector>,
    bound: f64,
}

impl std::fmt::Debug for StepProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepProcess")
            .field("partition", &self.partition)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl StepProcess {
    /// `coeffs[k]` takes exactly `k` arguments. The declared `bound` is
    /// spot-checked on a coarse probe lattice.
    pub fn new(partition: TimePartition, coeffs: Vec<Vector>, bound: f64) -> Result<Self> {
        if coeffs.len() != partition.n_intervals() {
            return Err(GcalcError::Config(format!(
                "need one coefficient per interval: {} coefficients for {} intervals",
                coeffs.len(),
                partition.n_intervals()
            )));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(GcalcError::Config(format!("bound must be finite and >= 0, got {bound}")));
        }
        let proc = Self {
            partition,
            coeffs,
            bound,
        };
        proc.spot_check_bound()?;
        Ok(proc)
    }

    /// Constant-per-interval process (coefficients ignore the path).
    pub fn piecewise_constant(partition: TimePartition, levels: Vec<f64>) -> Result<Self> {
        let bound = levels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let coeffs = levels
            .into_iter()
            .map(|v| Arc::new(move |_: &[f64]| v) as Vector)
            .collect();
        Self::new(partition, coeffs, bound)
    }

    fn spot_check_bound(&self) -> Result<()> {
        const PROBES: [f64; 5] = [-4.2, -1.0, 0.0, 0.7, 3.9];
        for (k, coeff) in self.coeffs.iter().enumerate() {
            // Cycle probe values through the k arguments.
            for offset in 0..PROBES.len() {
                let args: Vec<f64> = (0..k).map(|j| PROBES[(j + offset) % PROBES.len()]).collect();
                let v = coeff(&args);
                if !v.is_finite() || v.abs() > self.bound * (1.0 + 1e-9) {
                    return Err(GcalcError::Precondition(format!(
                        "step coefficient {k} takes value {v} beyond declared bound {}",
                        self.bound
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Value at `t` under the left-open convention: `t` in `(t_k, t_{k+1}]`
    /// picks `coeffs[k]`. `knots` must contain at least the path values at
    /// `t_1, ..., t_k`.
    pub fn eval_left_open(&self, t: f64, knots: &[f64]) -> Result<f64> {
        let k = self.partition.locate_left_open(t)?;
        self.apply(k, knots)
    }

    /// Value governing the interval starting at (or containing) `t` going
    /// right: `t` in `[t_k, t_{k+1})` picks `coeffs[k]`. This is the value an
    /// Ito-style left-endpoint sum must use.
    pub fn eval_right(&self, t: f64, knots: &[f64]) -> Result<f64> {
        let k = self.partition.locate_right_open(t)?;
        self.apply(k, knots)
    }

    fn apply(&self, k: usize, knots: &[f64]) -> Result<f64> {
        if knots.len() < k {
            return Err(GcalcError::Precondition(format!(
                "step coefficient {k} needs {k} observed knot values, got {}",
                knots.len()
            )));
        }
        Ok(self.coeffs[k](&knots[..k]))
    }
}
