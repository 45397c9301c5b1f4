//! Explicit monotone finite-difference solver for the backward equation
//! `d_t u + G(d_xx u) + f(t, x, u, d_x u, d_xx u) = 0` with terminal data.
//!
//! The sweep marches from the terminal level toward time zero. Each update
//! evaluates the generator and the driver explicitly at the level above, with
//! central differences inside the domain and a `d_xx u = 0` closure at the two
//! boundary nodes (ghost node by linear extension). Monotonicity — and with it
//! the comparison principle — holds under the step restriction
//! `(sigma_high_sq + 2 L_w) dt / dx^2 <= cfl_safety / 2`, which the solver
//! enforces up front and reports with the admissible step on rejection.

use std::io::Write;
use std::sync::Arc;

use crate::error::{GcalcError, Result};
use crate::functional::TerminalFunction;
use crate::generator::SublinearGenerator;
use crate::grid::SpaceGrid;

/// Driver `f(t, x, y, z, w)` with declared Lipschitz constants in `y`, `z`
/// and `w` (the value, first- and second-derivative arguments).
#[derive(Clone)]
pub struct MarkovDriver {
    f: Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>,
    lipschitz_y: f64,
    lipschitz_z: f64,
    lipschitz_w: f64,
}

impl std::fmt::Debug for MarkovDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MarkovDriver")
            .field("lipschitz_y", &self.lipschitz_y)
            .field("lipschitz_z", &self.lipschitz_z)
            .field("lipschitz_w", &self.lipschitz_w)
            .finish_non_exhaustive()
    }
}

impl MarkovDriver {
    pub fn new(
        f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz_y: f64,
        lipschitz_z: f64,
        lipschitz_w: f64,
    ) -> Result<Self> {
        for (name, l) in [("y", lipschitz_y), ("z", lipschitz_z), ("w", lipschitz_w)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(GcalcError::Config(format!(
                    "Lipschitz constant in {name} must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(Self {
            f: Arc::new(f),
            lipschitz_y,
            lipschitz_z,
            lipschitz_w,
        })
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64, z: f64, w: f64) -> f64 {
        (self.f)(t, x, y, z, w)
    }

    pub fn lipschitz_y(&self) -> f64 {
        self.lipschitz_y
    }

    pub fn lipschitz_z(&self) -> f64 {
        self.lipschitz_z
    }

    pub fn lipschitz_w(&self) -> f64 {
        self.lipschitz_w
    }

    /// Whether the driver reacts to the second-derivative argument. A zero
    /// declared constant asserts independence, which the weak-form BSDE
    /// decomposition relies on.
    pub fn depends_on_w(&self) -> bool {
        self.lipschitz_w > 0.0
    }

    /// Spot-check the declared Lipschitz constants on probe pairs within the
    /// given ranges (within a 1% modelling allowance). Not run automatically:
    /// intended for test suites and `verify`-style diagnostics.
    pub fn check_lipschitz(&self, t: f64, xs: &[f64], args: &[f64]) -> Result<()> {
        let allowance = 1.01;
        for &x in xs {
            for &a in args {
                for &b in args {
                    let base = self.eval(t, x, a, a, a);
                    let dy = (self.eval(t, x, b, a, a) - base).abs();
                    let dz = (self.eval(t, x, a, b, a) - base).abs();
                    let dw = (self.eval(t, x, a, a, b) - base).abs();
                    let gap = (b - a).abs();
                    if dy > allowance * self.lipschitz_y * gap + 1e-12
                        || dz > allowance * self.lipschitz_z * gap + 1e-12
                        || dw > allowance * self.lipschitz_w * gap + 1e-12
                    {
                        return Err(GcalcError::Precondition(format!(
                            "driver exceeds declared Lipschitz bounds near (t={t}, x={x}, {a} -> {b})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Time-stepping controls for one backward solve.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Solve runs backward over `[t_start, t_end]`.
    pub t_start: f64,
    pub t_end: f64,
    /// Number of uniform time steps.
    pub n_steps: usize,
    /// Fraction of the stability limit the step may use, in (0, 1].
    pub cfl_safety: f64,
    /// Keep every `store_stride`-th level (must divide `n_steps`); both end
    /// levels are always kept. Larger strides bound the surface memory.
    pub store_stride: usize,
}

impl SolveOptions {
    /// Store every level.
    pub fn dense(t_start: f64, t_end: f64, n_steps: usize) -> Self {
        Self {
            t_start,
            t_end,
            n_steps,
            cfl_safety: 0.9,
            store_stride: 1,
        }
    }

    /// Store only the first and last levels (cheapest; enough when only the
    /// value at the start of the interval is needed).
    pub fn ends_only(t_start: f64, t_end: f64, n_steps: usize) -> Self {
        Self {
            store_stride: n_steps.max(1),
            ..Self::dense(t_start, t_end, n_steps)
        }
    }

    /// Override the fraction of the stability limit the step may use.
    pub fn with_cfl_safety(mut self, cfl_safety: f64) -> Self {
        self.cfl_safety = cfl_safety;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start >= self.t_end {
            return Err(GcalcError::Config(format!(
                "need t_start < t_end, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.n_steps == 0 {
            return Err(GcalcError::Config("n_steps must be positive".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(GcalcError::Config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if self.store_stride == 0 || !self.n_steps.is_multiple_of(self.store_stride) {
            return Err(GcalcError::Config(format!(
                "store_stride {} must divide n_steps {}",
                self.store_stride, self.n_steps
            )));
        }
        Ok(())
    }
}

/// Largest stable time step for the explicit sweep on `grid`.
pub fn admissible_dt(
    g: &SublinearGenerator,
    driver: Option<&MarkovDriver>,
    grid: &SpaceGrid,
    cfl_safety: f64,
) -> f64 {
    let (_, sh) = g.sigma_band();
    let lw = driver.map_or(0.0, |d| d.lipschitz_w);
    let dx = grid.dx();
    0.5 * cfl_safety * dx * dx / (sh + 2.0 * lw)
}

/// Smallest admissible step count covering `duration` on `grid`.
pub fn steps_for(
    g: &SublinearGenerator,
    driver: Option<&MarkovDriver>,
    grid: &SpaceGrid,
    duration: f64,
    cfl_safety: f64,
) -> usize {
    (duration / admissible_dt(g, driver, grid, cfl_safety)).ceil().max(1.0) as usize
}

/// Backward value surface: stored time levels (ascending) of nodal values.
/// First and second space derivatives are always derived on demand from the
/// stored values — they are never stored independently.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    grid: SpaceGrid,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ValueSurface {
    /// Wrap externally produced nodal tables as a surface (ascending times,
    /// one value row per time), so derivative tables and value slices share
    /// the surface CSV schema and lookup helpers.
    pub fn from_levels(grid: SpaceGrid, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(GcalcError::Config(format!(
                "surface needs one level per time, got {} times and {} levels",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GcalcError::Config("surface times must be strictly increasing".into()));
        }
        if values.iter().any(|row| row.len() != grid.n_nodes()) {
            return Err(GcalcError::Config(format!(
                "every level must have {} values",
                grid.n_nodes()
            )));
        }
        Ok(Self {
            grid,
            times,
            values,
        })
    }

    /// Wrap a single nodal table at one time as a surface.
    pub fn from_single_level(grid: SpaceGrid, t: f64, values: Vec<f64>) -> Result<Self> {
        Self::from_levels(grid, vec![t], vec![values])
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    /// Stored time levels, ascending; the first entry is the solve start.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Nodal values at stored level `l`.
    pub fn level(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    pub fn n_levels(&self) -> usize {
        self.times.len()
    }

    /// Value at the first stored time, center node.
    pub fn start_center_value(&self) -> f64 {
        self.values[0][self.grid.center_index()]
    }

    /// First space derivative at level `l` (central differences; endpoints
    /// copy the adjacent interior value).
    pub fn dx_level(&self, l: usize) -> Vec<f64> {
        discrete_first_diff(&self.values[l], self.grid.dx())
    }

    /// Second space derivative at level `l` (same endpoint convention).
    pub fn dxx_level(&self, l: usize) -> Vec<f64> {
        discrete_second_diff(&self.values[l], self.grid.dx())
    }

    fn time_bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let tol = 1e-9 * (t1 - t0).max(1.0);
        if t < t0 - tol || t > t1 + tol {
            return Err(GcalcError::Domain(format!(
                "time {t} outside stored surface range [{t0}, {t1}]"
            )));
        }
        let t = t.clamp(t0, t1);
        let hi = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => i.min(self.times.len() - 1),
        };
        if hi == 0 {
            return Ok((0, 0, 0.0));
        }
        let lo = hi - 1;
        let span = self.times[hi] - self.times[lo];
        let w = ((t - self.times[lo]) / span).clamp(0.0, 1.0);
        Ok((lo, hi, w))
    }

    /// Bilinear value lookup at `(t, x)`; `t` must be in the stored range.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let (lo, hi, w) = self.time_bracket(t)?;
        let a = self.grid.interp_linear(&self.values[lo], x);
        if lo == hi || w == 0.0 {
            return Ok(a);
        }
        let b = self.grid.interp_linear(&self.values[hi], x);
        Ok(a + w * (b - a))
    }

    /// First space derivative at `(t, x)` (derived rows, bilinear lookup).
    pub fn dx_at(&self, t: f64, x: f64) -> Result<f64> {
        self.derived_at(t, x, discrete_first_diff)
    }

    /// Second space derivative at `(t, x)` (derived rows, bilinear lookup).
    pub fn dxx_at(&self, t: f64, x: f64) -> Result<f64> {
        self.derived_at(t, x, discrete_second_diff)
    }

    fn derived_at(&self, t: f64, x: f64, diff: fn(&[f64], f64) -> Vec<f64>) -> Result<f64> {
        let (lo, hi, w) = self.time_bracket(t)?;
        let dx = self.grid.dx();
        let a = self.grid.interp_linear(&diff(&self.values[lo], dx), x);
        if lo == hi || w == 0.0 {
            return Ok(a);
        }
        let b = self.grid.interp_linear(&diff(&self.values[hi], dx), x);
        Ok(a + w * (b - a))
    }

    /// Write `t,x,u,dxu,dxxu` rows sorted by (t ascending, x ascending),
    /// every numeric field with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,x,u,dxu,dxxu")?;
        for (l, t) in self.times.iter().enumerate() {
            let u = &self.values[l];
            let du = self.dx_level(l);
            let ddu = self.dxx_level(l);
            for j in 0..self.grid.n_nodes() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    crate::csvfmt::fmt17(*t),
                    crate::csvfmt::fmt17(self.grid.node(j)),
                    crate::csvfmt::fmt17(u[j]),
                    crate::csvfmt::fmt17(du[j]),
                    crate::csvfmt::fmt17(ddu[j])
                )?;
            }
        }
        Ok(())
    }
}

/// Central first difference; endpoints copy the adjacent interior value.
pub fn discrete_first_diff(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    debug_assert!(n >= 3);
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        out[j] = (values[j + 1] - values[j - 1]) / (2.0 * dx);
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}

/// Central second difference; endpoints copy the adjacent interior value.
pub fn discrete_second_diff(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    debug_assert!(n >= 3);
    let mut out = vec![0.0; n];
    let inv = 1.0 / (dx * dx);
    for j in 1..n - 1 {
        out[j] = (values[j + 1] - 2.0 * values[j] + values[j - 1]) * inv;
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}

/// Backward solve of `d_t u + G(d_xx u) + f = 0` with terminal data.
///
/// Rejects steps beyond the CFL bound ([`GcalcError::Cfl`] carries the
/// admissible step) and reports the first non-finite level as divergence.
pub fn solve_backward(
    g: &SublinearGenerator,
    terminal: &TerminalFunction,
    driver: Option<&MarkovDriver>,
    grid: &SpaceGrid,
    opts: &SolveOptions,
) -> Result<ValueSurface> {
    opts.validate()?;
    let rg = g.resolved(None)?;
    let dt = (opts.t_end - opts.t_start) / opts.n_steps as f64;
    let adm = admissible_dt(g, driver, grid, opts.cfl_safety);
    if dt > adm * (1.0 + 1e-12) {
        return Err(GcalcError::Cfl { dt, admissible: adm });
    }

    let n = grid.n_nodes();
    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_2dx = 1.0 / (2.0 * dx);
    let xs = grid.nodes();

    let mut row: Vec<f64> = xs.iter().map(|&x| terminal.eval(x)).collect();
    if row.iter().any(|v| !v.is_finite()) {
        return Err(GcalcError::Precondition(
            "terminal values must be finite on the grid".into(),
        ));
    }

    // Levels are collected terminal-first and reversed at the end.
    let mut stored: Vec<Vec<f64>> = Vec::with_capacity(opts.n_steps / opts.store_stride + 1);
    let mut stored_times: Vec<f64> = Vec::with_capacity(stored.capacity());
    stored.push(row.clone());
    stored_times.push(opts.t_end);

    let mut next = vec![0.0; n];
    for k in (0..opts.n_steps).rev() {
        // The driver and generator are evaluated explicitly at level k+1.
        let t_up = opts.t_start + (k + 1) as f64 * dt;
        for (j, slot) in next.iter_mut().enumerate() {
            let u = row[j];
            let (w, z) = if j == 0 {
                // Ghost node by linear extension: d_xx = 0, one-sided slope.
                (0.0, (row[1] - u) / dx)
            } else if j == n - 1 {
                (0.0, (u - row[n - 2]) / dx)
            } else {
                (
                    (row[j + 1] - 2.0 * u + row[j - 1]) * inv_dx2,
                    (row[j + 1] - row[j - 1]) * inv_2dx,
                )
            };
            let mut rhs = rg.eval(w);
            if let Some(d) = driver {
                rhs += d.eval(t_up, xs[j], u, z, w);
            }
            *slot = u + dt * rhs;
        }
        std::mem::swap(&mut row, &mut next);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(GcalcError::Divergence { level: k });
        }
        if k % opts.store_stride == 0 {
            stored.push(row.clone());
            stored_times.push(opts.t_start + k as f64 * dt);
        }
    }

    stored.reverse();
    stored_times.reverse();
    Ok(ValueSurface {
        grid: grid.clone(),
        times: stored_times,
        values: stored,
    })
}
