//! Path-functional calculus for piecewise-cylindrical processes: the time and
//! state derivatives along a path, the parabolic operators built from them,
//! the stepwise quadratic-variation approximation process, and discrete
//! Ito-formula residuals.
//!
//! A process here is a list of smooth pieces over a time partition. Piece `k`
//! is a function `u_k(t, x; x_1, ..., x_k)` of the clock, the current state
//! and the path values observed at the first `k` partition knots. Derivatives
//! are supplied analytically by the piece constructors and cross-checked
//! against central differences at construction; evaluation never
//! differentiates numerically (the non-commutation phenomenon probed in the
//! tests needs exact derivative values).
//!
//! Conventions at partition knots: values and state derivatives use the
//! left-open location (the knot belongs to the piece ending there), while the
//! time derivative uses the right limit (the piece starting there). Traces
//! along sampled paths evaluate derivatives on each step's covering piece,
//! which is the left-endpoint (Ito) convention integrals require.

use std::sync::Arc;

use crate::error::{GcalcError, Result};
use crate::generator::SublinearGenerator;
use crate::grid::TimePartition;
use crate::scenarios::SamplePath;

type PieceFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// One smooth piece with its analytic derivatives. All four closures take
/// `(t, x, observed)` where `observed` holds the path values at the knots
/// preceding the piece.
#[derive(Clone)]
pub struct PathPiece {
    value: PieceFn,
    d_t: PieceFn,
    d_x: PieceFn,
    d_xx: PieceFn,
}

impl std::fmt::Debug for PathPiece {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathPiece").finish_non_exhaustive()
    }
}

impl PathPiece {
    pub fn new(
        value: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        d_t: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        d_x: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        d_xx: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            d_t: Arc::new(d_t),
            d_x: Arc::new(d_x),
            d_xx: Arc::new(d_xx),
        }
    }

    /// Bivariate polynomial piece `sum_ij c[i][j] t^i x^j` (independent of the
    /// observed knots), with derivatives taken coefficient-wise.
    pub fn poly2(coeffs: &[Vec<f64>]) -> Self {
        fn eval(c: &[Vec<f64>], t: f64, x: f64) -> f64 {
            let mut acc = 0.0;
            for row in c.iter().rev() {
                let mut inner = 0.0;
                for &cj in row.iter().rev() {
                    inner = inner * x + cj;
                }
                acc = acc * t + inner;
            }
            acc
        }
        fn shift_t(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
            c.iter()
                .enumerate()
                .skip(1)
                .map(|(i, row)| row.iter().map(|&v| v * i as f64).collect())
                .collect()
        }
        fn shift_x(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
            c.iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .skip(1)
                        .map(|(j, &v)| v * j as f64)
                        .collect()
                })
                .collect()
        }
        let c: Vec<Vec<f64>> = coeffs.to_vec();
        let ct = shift_t(&c);
        let cx = shift_x(&c);
        let cxx = shift_x(&cx);
        Self::new(
            move |t, x, _| eval(&c, t, x),
            move |t, x, _| eval(&ct, t, x),
            move |t, x, _| eval(&cx, t, x),
            move |t, x, _| eval(&cxx, t, x),
        )
    }
}

/// Piecewise-cylindrical path process over a partition of `[0, T]`: one
/// [`PathPiece`] per interval, pieces agreeing at the interior knots.
#[derive(Debug, Clone)]
pub struct CylinderPathProcess {
    partition: TimePartition,
    pieces: Vec<PathPiece>,
}

const PROBE_STATES: [f64; 4] = [-1.7, -0.2, 0.6, 2.1];

impl CylinderPathProcess {
    /// Validating constructor: checks the piece count, the continuity
    /// matching condition at every interior knot (the new observed value
    /// equals the state at the junction), and each piece's declared
    /// derivatives against central differences at probe points.
    pub fn new(partition: TimePartition, pieces: Vec<PathPiece>) -> Result<Self> {
        let probe_all: Vec<usize> = (0..pieces.len()).collect();
        Self::with_probed_pieces(partition, pieces, &probe_all)
    }

    /// Constructor for generated families whose pieces share one closed form:
    /// derivative and matching checks run only on the probe subset.
    fn with_probed_pieces(
        partition: TimePartition,
        pieces: Vec<PathPiece>,
        probe_pieces: &[usize],
    ) -> Result<Self> {
        if pieces.len() != partition.n_intervals() {
            return Err(GcalcError::Config(format!(
                "need one piece per interval: {} pieces for {} intervals",
                pieces.len(),
                partition.n_intervals()
            )));
        }
        let proc = Self { partition, pieces };
        for &k in probe_pieces {
            proc.check_matching(k)?;
            proc.check_derivatives(k)?;
        }
        Ok(proc)
    }

    /// Continuity at the right end of piece `k`: the next piece, fed the
    /// junction state as the newly observed knot value, must agree.
    fn check_matching(&self, k: usize) -> Result<()> {
        if k + 1 >= self.pieces.len() {
            return Ok(());
        }
        let t = self.partition.knots()[k + 1];
        for (offset, &x) in PROBE_STATES.iter().enumerate() {
            let mut observed: Vec<f64> = (0..k)
                .map(|j| PROBE_STATES[(j + offset) % PROBE_STATES.len()])
                .collect();
            let left = (self.pieces[k].value)(t, x, &observed);
            observed.push(x);
            let right = (self.pieces[k + 1].value)(t, x, &observed);
            let tol = 1e-8 * left.abs().max(right.abs()).max(1.0);
            if !(left.is_finite() && right.is_finite()) || (left - right).abs() > tol {
                return Err(GcalcError::Precondition(format!(
                    "pieces {k} and {} disagree at the knot t = {t}, x = {x}: {left} vs {right}",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Central-difference cross-check of the declared derivatives of piece
    /// `k` at its interval midpoint. Each derivative is compared against
    /// differences at steps `h` and `h/2`; their spread estimates the
    /// truncation scale, so the test adapts to stiff pieces instead of
    /// using one fixed step budget.
    fn check_derivatives(&self, k: usize) -> Result<()> {
        let (t0, t1) = (self.partition.knots()[k], self.partition.knots()[k + 1]);
        let tm = 0.5 * (t0 + t1);
        let ht = (0.25 * (t1 - t0)).min(1e-3);
        let hx = 1e-4;
        let piece = &self.pieces[k];
        for (offset, &x) in PROBE_STATES.iter().enumerate() {
            let observed: Vec<f64> = (0..k)
                .map(|j| PROBE_STATES[(j + offset) % PROBE_STATES.len()])
                .collect();
            let v = |t: f64, x: f64| (piece.value)(t, x, &observed);
            let scale = v(tm, x).abs().max(1.0);
            let fd_t = |h: f64| (v(tm + h, x) - v(tm - h, x)) / (2.0 * h);
            let fd_x = |h: f64| (v(tm, x + h) - v(tm, x - h)) / (2.0 * h);
            let fd_xx = |h: f64| (v(tm, x + h) - 2.0 * v(tm, x) + v(tm, x - h)) / (h * h);
            let checks = [
                ("time", (piece.d_t)(tm, x, &observed), fd_t(0.5 * ht), fd_t(ht)),
                ("state", (piece.d_x)(tm, x, &observed), fd_x(0.5 * hx), fd_x(hx)),
                (
                    "second state",
                    (piece.d_xx)(tm, x, &observed),
                    fd_xx(0.5 * hx),
                    fd_xx(hx),
                ),
            ];
            for (name, analytic, fd_fine, fd_coarse) in checks {
                // A correct analytic value sits within the fine difference's
                // truncation error, which the coarse/fine spread bounds; the
                // flat terms absorb roundoff amplified by 1/h^2.
                let tol = 4.0 * (fd_coarse - fd_fine).abs() + 1e-5 * scale + 1e-8;
                if !analytic.is_finite() || (analytic - fd_fine).abs() > tol {
                    return Err(GcalcError::Precondition(format!(
                        "declared {name} derivative of piece {k} is {analytic} but numerics see {fd_fine} at (t={tm}, x={x})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    fn observed_slice<'a>(&self, k: usize, observed: &'a [f64]) -> Result<&'a [f64]> {
        if observed.len() < k {
            return Err(GcalcError::Precondition(format!(
                "piece {k} needs {k} observed knot values, got {}",
                observed.len()
            )));
        }
        Ok(&observed[..k])
    }

    /// Process value at `(t, x)` given the observed knot values; the knot
    /// belongs to the piece ending there.
    pub fn value(&self, t: f64, x: f64, observed: &[f64]) -> Result<f64> {
        let k = self.partition.locate_left_open(t)?;
        Ok((self.pieces[k].value)(t, x, self.observed_slice(k, observed)?))
    }

    /// Time derivative with the right-limit convention at knots (the piece
    /// starting there; the final time uses the last piece).
    pub fn d_t(&self, t: f64, x: f64, observed: &[f64]) -> Result<f64> {
        let k = self.partition.locate_right_open(t)?;
        Ok((self.pieces[k].d_t)(t, x, self.observed_slice(k, observed)?))
    }

    /// First state derivative (left-open at knots, like the value).
    pub fn d_x(&self, t: f64, x: f64, observed: &[f64]) -> Result<f64> {
        let k = self.partition.locate_left_open(t)?;
        Ok((self.pieces[k].d_x)(t, x, self.observed_slice(k, observed)?))
    }

    /// Second state derivative (left-open at knots, like the value).
    pub fn d_xx(&self, t: f64, x: f64, observed: &[f64]) -> Result<f64> {
        let k = self.partition.locate_left_open(t)?;
        Ok((self.pieces[k].d_xx)(t, x, self.observed_slice(k, observed)?))
    }

    /// Wiener parabolic operator `D_t + (1/2) D_xx` (scalar state, so the
    /// Laplacian is the plain second derivative).
    pub fn a_operator(&self, t: f64, x: f64, observed: &[f64]) -> Result<f64> {
        Ok(self.d_t(t, x, observed)? + 0.5 * self.d_xx(t, x, observed)?)
    }

    /// Sublinear parabolic operator `D_t + G(D_xx)`.
    pub fn a_g_operator(
        &self,
        t: f64,
        x: f64,
        observed: &[f64],
        g: &SublinearGenerator,
    ) -> Result<f64> {
        Ok(self.d_t(t, x, observed)? + g.eval(self.d_xx(t, x, observed)?)?)
    }

    /// Bind the process to a sampled path: validates that the path grid
    /// refines the partition and shares its horizon, and extracts the
    /// observed knot values once.
    pub fn along_path<'a>(&'a self, path: &'a SamplePath) -> Result<PathTrace<'a>> {
        let horizon = self.partition.final_time();
        if (path.horizon() - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(GcalcError::Precondition(format!(
                "path horizon {} does not match the process horizon {horizon}",
                path.horizon()
            )));
        }
        let mut observed = Vec::with_capacity(self.partition.n_intervals());
        for &tk in &self.partition.knots()[1..] {
            observed.push(path.b[path.index_of(tk)?]);
        }
        Ok(PathTrace {
            process: self,
            path,
            observed,
        })
    }
}

/// A process bound to one sampled path; evaluations are indexed by the
/// path's grid. Derivative lookups use each step's covering piece (the
/// left-endpoint convention of Ito sums); values use the left-open piece.
#[derive(Debug)]
pub struct PathTrace<'a> {
    process: &'a CylinderPathProcess,
    path: &'a SamplePath,
    observed: Vec<f64>,
}

impl PathTrace<'_> {
    fn covering_piece(&self, i: usize) -> usize {
        let t = self.path.times[i];
        self.process
            .partition
            .locate_right_open(t)
            .expect("path times validated against the partition")
    }

    fn value_piece(&self, i: usize) -> usize {
        let t = self.path.times[i];
        self.process
            .partition
            .locate_left_open(t)
            .expect("path times validated against the partition")
    }

    fn args(&self, k: usize, i: usize) -> (f64, f64, &[f64]) {
        (self.path.times[i], self.path.b[i], &self.observed[..k])
    }

    pub fn value(&self, i: usize) -> f64 {
        let k = self.value_piece(i);
        let (t, x, obs) = self.args(k, i);
        (self.process.pieces[k].value)(t, x, obs)
    }

    pub fn d_t(&self, i: usize) -> f64 {
        let k = self.covering_piece(i);
        let (t, x, obs) = self.args(k, i);
        (self.process.pieces[k].d_t)(t, x, obs)
    }

    pub fn d_x(&self, i: usize) -> f64 {
        let k = self.covering_piece(i);
        let (t, x, obs) = self.args(k, i);
        (self.process.pieces[k].d_x)(t, x, obs)
    }

    pub fn d_xx(&self, i: usize) -> f64 {
        let k = self.covering_piece(i);
        let (t, x, obs) = self.args(k, i);
        (self.process.pieces[k].d_xx)(t, x, obs)
    }
}

/// The stepwise quadratic-variation process at dyadic level `n`: on each of
/// the `2^n` equal intervals, the completed squared increments plus the
/// running square `(x - B_{t_k})^2`. Its time derivative vanishes and its
/// second state derivative is the constant 2 at every level, while its first
/// state derivative is the sawtooth `2(B_t - B_{t_k})`.
pub fn qn_process(n: u32, horizon: f64) -> Result<CylinderPathProcess> {
    if n > 14 {
        return Err(GcalcError::Config(format!(
            "quadratic-variation level n = {n} would need 2^{n} pieces; the cap is 14"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(GcalcError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let m = 1usize << n;
    let knots: Vec<f64> = (0..=m).map(|i| horizon * i as f64 / m as f64).collect();
    let partition = TimePartition::new(knots)?;
    let pieces: Vec<PathPiece> = (0..m)
        .map(|k| {
            PathPiece::new(
                move |_t, x, obs: &[f64]| {
                    let mut total = 0.0;
                    let mut prev = 0.0;
                    for &b in &obs[..k] {
                        let inc = b - prev;
                        total += inc * inc;
                        prev = b;
                    }
                    let inc = x - prev;
                    total + inc * inc
                },
                |_t, _x, _obs: &[f64]| 0.0,
                move |_t, x, obs: &[f64]| {
                    let prev = if k == 0 { 0.0 } else { obs[k - 1] };
                    2.0 * (x - prev)
                },
                |_t, _x, _obs: &[f64]| 2.0,
            )
        })
        .collect();
    let probes = [0, m / 2, m - 1];
    let mut probe_list: Vec<usize> = probes.iter().copied().filter(|&p| p < m).collect();
    probe_list.dedup();
    CylinderPathProcess::with_probed_pieces(partition, pieces, &probe_list)
}

/// Discrete Ito-formula residual along a sampled path:
/// `u(T) - u(0) - sum_j [D_t u dt + D_x u dB + (1/2) D_xx u d<B>]`, all
/// integrands at the step's left endpoint on its covering piece. The sum is
/// accumulated in step order so telescoping integrands collapse at machine
/// precision.
pub fn ito_residual(u: &CylinderPathProcess, path: &SamplePath) -> Result<f64> {
    let trace = u.along_path(path)?;
    let n = path.n_steps();
    let mut sum = 0.0;
    for j in 0..n {
        let dt = path.times[j + 1] - path.times[j];
        let db = path.b[j + 1] - path.b[j];
        let dqv = path.qv[j + 1] - path.qv[j];
        sum += trace.d_t(j) * dt + trace.d_x(j) * db + 0.5 * trace.d_xx(j) * dqv;
    }
    Ok(trace.value(n) - trace.value(0) - sum)
}
