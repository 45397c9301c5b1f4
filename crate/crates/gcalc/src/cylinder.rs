//! Expectation and conditional expectation of cylinder functionals under the
//! sublinear band expectation.
//!
//! The value of `phi(w(s_1), ..., w(s_m))` is computed by chaining backward
//! heat solves interval by interval: the last stage solves the band equation
//! on `[s_{m-1}, s_m]` with terminal `y -> phi(y_1, ..., y_{m-1}, y)` for
//! every node of a tensor grid over the earlier coordinates, each earlier
//! stage consumes the previous stage's table through linear interpolation,
//! and the final solve starts from the evaluation state. Every solve runs on
//! its own grid centered at the parameter node it serves, so the value read
//! at the center always has the full configured buffer to the boundary
//! closure. Parameter axes are symmetric uniform grids whose half-width
//! follows the diffusion scale `multiplier * sigma_high * sqrt(s_k)` and
//! whose spacing is `param_stride` times the state spacing.
//!
//! The tensor over parameter nodes is exponential in the functional's arity;
//! the configured cap turns oversized requests into a structured blow-up
//! error carrying a cost estimate instead of an unbounded computation.

use crate::error::{GcalcError, Result};
use crate::functional::{CylinderFunctional, TerminalFunction};
use crate::generator::SublinearGenerator;
use crate::gheat::{solve_backward, steps_for, SolveOptions, ValueSurface};
use crate::grid::{default_domain, NumericsConfig, SpaceGrid};
use crate::parallel::map_indexed;

/// Symmetric parameter axis for a path value observed at time `s`:
/// spacing `param_stride * dx`, half-width at least
/// `domain_multiplier * sigma_high * sqrt(s)`, centered on the origin.
fn param_axis(g: &SublinearGenerator, s: f64, cfg: &NumericsConfig) -> Result<SpaceGrid> {
    let (_, sh) = g.sigma_band();
    let spacing = cfg.param_stride as f64 * cfg.dx;
    let half_target = cfg.domain_multiplier * sh.sqrt() * s.sqrt();
    let m = (half_target / spacing).ceil().max(1.0) as usize;
    let half = m as f64 * spacing;
    SpaceGrid::new(-half, half, 2 * m + 1)
}

/// One backward solve of the band equation over `[t0, t1]`, on a grid
/// centered at `center`, returning the value at `(t0, center)`.
fn solve_interval(
    g: &SublinearGenerator,
    terminal: &TerminalFunction,
    center: f64,
    t0: f64,
    t1: f64,
    cfg: &NumericsConfig,
) -> Result<f64> {
    let grid = default_domain(g, center, t1 - t0, cfg)?;
    let n_steps = steps_for(g, None, &grid, t1 - t0, cfg.cfl_safety);
    let opts = SolveOptions::ends_only(t0, t1, n_steps).with_cfl_safety(cfg.cfl_safety);
    Ok(solve_backward(g, terminal, None, &grid, &opts)?.start_center_value())
}

/// Flattened tensor table over the given axes (row-major, last axis fastest).
struct StageTable {
    axes: Vec<SpaceGrid>,
    values: Vec<f64>,
}

impl StageTable {
    fn strides(axes: &[SpaceGrid]) -> Vec<usize> {
        let mut strides = vec![1usize; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].n_nodes();
        }
        strides
    }

    fn tuple_of(axes: &[SpaceGrid], flat: usize) -> Vec<f64> {
        let strides = Self::strides(axes);
        axes.iter()
            .zip(strides)
            .map(|(axis, stride)| axis.node(flat / stride % axis.n_nodes()))
            .collect()
    }

    /// Values along the last axis at the leading-node index `flat_prefix`
    /// (an index into the table over all axes but the last).
    fn last_axis_slice(&self, flat_prefix: usize) -> &[f64] {
        let len = self.axes.last().map_or(1, SpaceGrid::n_nodes);
        &self.values[flat_prefix * len..(flat_prefix + 1) * len]
    }
}

/// Total solve count of the chained recursion, used to size blow-up reports.
fn chain_cost(axes: &[SpaceGrid]) -> f64 {
    let mut cost = 1.0; // the final solve from the evaluation state
    let mut nodes = 1.0;
    for axis in &axes[..axes.len().saturating_sub(1)] {
        nodes *= axis.n_nodes() as f64;
        cost += nodes;
    }
    cost
}

/// Chained-solve core shared by the expectation entry points: evaluates the
/// functional's conditional value at `(t_eval, state)` given the observed
/// values `frozen` at the functional times before `t_eval`. The free times
/// (those after `t_eval`) drive the tensor recursion.
fn solve_chain(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
    t_eval: f64,
    frozen: &[f64],
    state: f64,
) -> Result<f64> {
    cfg.validate()?;
    let times = xi.times();
    let horizon = xi.horizon();
    let tol = 1e-9 * horizon.max(1.0);
    let n_frozen = times.iter().filter(|&&s| s < t_eval - tol).count();
    debug_assert_eq!(n_frozen, frozen.len());
    let free: Vec<f64> = times[n_frozen..]
        .iter()
        .copied()
        .filter(|&s| s > t_eval + tol)
        .collect();

    // A path value observed at t_eval stands in for a functional time there.
    let held: Vec<f64> = if times.len() - n_frozen > free.len() {
        frozen.iter().copied().chain([state]).collect()
    } else {
        frozen.to_vec()
    };

    let m = free.len();
    if m == 0 {
        return Ok(xi.eval(&held));
    }
    let axes: Vec<SpaceGrid> = free
        .iter()
        .map(|&s| param_axis(g, s, cfg))
        .collect::<Result<_>>()?;
    if m > cfg.max_cylinder_arity {
        return Err(GcalcError::TensorBlowup {
            arity: m,
            cap: cfg.max_cylinder_arity,
            cost: chain_cost(&axes),
        });
    }

    if m == 1 {
        // Single free time: the functional itself is the terminal, so the
        // chain degenerates to exactly one direct solve (no tabulation).
        let held_args = held.clone();
        let xi_c = xi.clone();
        let terminal = TerminalFunction::new(
            move |y| {
                let args: Vec<f64> = held_args.iter().copied().chain([y]).collect();
                xi_c.eval(&args)
            },
            xi.growth_degree(),
            xi.growth_coeff(),
        );
        return solve_interval(g, &terminal, state, t_eval, free[0], cfg);
    }
    let table = build_first_stage(xi, g, cfg, &held, &free, &axes)?;
    let stage1 = reduce_stages(xi, g, cfg, &free, table)?;
    let terminal = slice_terminal(&stage1.axes[0], stage1.values, xi);
    solve_interval(g, &terminal, state, t_eval, free[0], cfg)
}

/// Terminal function reading a tabulated slice by linear interpolation (the
/// table is linearly extended outside its axis, consistent with the
/// asymptotically-linear boundary closure).
fn slice_terminal(axis: &SpaceGrid, slice: Vec<f64>, xi: &CylinderFunctional) -> TerminalFunction {
    let axis = axis.clone();
    TerminalFunction::new(
        move |x| axis.interp_linear(&slice, x),
        xi.growth_degree(),
        xi.growth_coeff(),
    )
}

/// Tabulate the deepest stage: for every node tuple over all free axes but
/// the last, solve the last interval with the bare functional as terminal.
/// With a single free time there is nothing to solve yet; the table is the
/// functional itself sampled on the last axis (handled by the caller).
fn build_first_stage(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
    held: &[f64],
    free: &[f64],
    axes: &[SpaceGrid],
) -> Result<StageTable> {
    let m = free.len();
    if m == 1 {
        let axis = &axes[0];
        let values: Vec<f64> = axis
            .nodes()
            .iter()
            .map(|&y| {
                let args: Vec<f64> = held.iter().copied().chain([y]).collect();
                xi.eval(&args)
            })
            .collect();
        return Ok(StageTable {
            axes: axes.to_vec(),
            values,
        });
    }
    let lead_axes = &axes[..m - 1];
    let count: usize = lead_axes.iter().map(SpaceGrid::n_nodes).product();
    let results = map_indexed(count, |flat| {
        let tuple = StageTable::tuple_of(lead_axes, flat);
        let args_head: Vec<f64> = held.iter().copied().chain(tuple.iter().copied()).collect();
        let center = tuple[m - 2];
        let terminal = TerminalFunction::new(
            {
                let args_head = args_head.clone();
                let xi = xi.clone();
                move |y| {
                    let args: Vec<f64> = args_head.iter().copied().chain([y]).collect();
                    xi.eval(&args)
                }
            },
            xi.growth_degree(),
            xi.growth_coeff(),
        );
        solve_interval(g, &terminal, center, free[m - 2], free[m - 1], cfg)
    });
    let values = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(StageTable {
        axes: axes[..m - 1].to_vec(),
        values,
    })
}

/// Collapse stage tables one free time at a time until only the first free
/// axis remains.
fn reduce_stages(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
    free: &[f64],
    mut table: StageTable,
) -> Result<StageTable> {
    while table.axes.len() > 1 {
        let j = table.axes.len(); // collapsing the value at free time s_j
        let lead_axes = table.axes[..j - 1].to_vec();
        let count: usize = lead_axes.iter().map(SpaceGrid::n_nodes).product();
        let results = map_indexed(count, |flat| {
            let tuple = StageTable::tuple_of(&lead_axes, flat);
            let center = tuple[j - 2];
            let terminal = slice_terminal(
                table.axes.last().unwrap(),
                table.last_axis_slice(flat).to_vec(),
                xi,
            );
            solve_interval(g, &terminal, center, free[j - 2], free[j - 1], cfg)
        });
        let values = results.into_iter().collect::<Result<Vec<f64>>>()?;
        table = StageTable {
            axes: lead_axes,
            values,
        };
    }
    Ok(table)
}

/// Expectation of a cylinder functional under the band generator: the
/// chained backward solve started from the origin at time zero.
pub fn g_expectation(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
) -> Result<f64> {
    solve_chain(xi, g, cfg, 0.0, &[], 0.0)
}

/// Conditional expectation at time `t` given the observed path values:
/// `observed` holds the values at the functional times strictly before `t`
/// followed by the value at `t` itself. At `t = 0` an empty slice is
/// accepted (paths start at the origin); at the functional's horizon the
/// functional is evaluated directly.
pub fn conditional_g_expectation(
    xi: &CylinderFunctional,
    t: f64,
    observed: &[f64],
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
) -> Result<f64> {
    let horizon = xi.horizon();
    let tol = 1e-9 * horizon.max(1.0);
    if !t.is_finite() || t < -tol || t > horizon + tol {
        return Err(GcalcError::Domain(format!(
            "conditioning time {t} outside the functional horizon [0, {horizon}]"
        )));
    }
    let before: Vec<f64> = xi
        .times()
        .iter()
        .copied()
        .filter(|&s| s < t - tol)
        .collect();
    if t <= tol && observed.is_empty() {
        return solve_chain(xi, g, cfg, 0.0, &[], 0.0);
    }
    if observed.len() != before.len() + 1 {
        let mut required = before;
        required.push(t);
        return Err(GcalcError::MissingObservations(required));
    }
    let (frozen, state) = observed.split_at(observed.len() - 1);
    let state = state[0];
    if t <= tol && state.abs() > 1e-9 {
        return Err(GcalcError::Precondition(format!(
            "paths start at the origin, but the value at time 0 was given as {state}"
        )));
    }
    solve_chain(xi, g, cfg, t.max(0.0), frozen, state)
}

/// Lower and upper mean bounds `(-E[-xi], E[xi])`. The scheme's step
/// operator and interpolation are monotone and subadditive, so the reported
/// lower bound cannot exceed the upper one beyond rounding noise.
pub fn g_mean_bounds(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
) -> Result<(f64, f64)> {
    let upper = g_expectation(xi, g, cfg)?;
    let lower = -g_expectation(&xi.negate(), g, cfg)?;
    debug_assert!(lower <= upper + 1e-9 * upper.abs().max(1.0));
    Ok((lower, upper))
}

/// First-stage slice `x_1 -> v_1(x_1)` of the chained recursion as a
/// single-time surface over the first parameter axis (the shared CSV schema
/// applies). For arity 1 this is the bare functional sampled on its axis.
pub fn first_stage_surface(
    xi: &CylinderFunctional,
    g: &SublinearGenerator,
    cfg: &NumericsConfig,
) -> Result<ValueSurface> {
    cfg.validate()?;
    let free = xi.times().to_vec();
    let axes: Vec<SpaceGrid> = free
        .iter()
        .map(|&s| param_axis(g, s, cfg))
        .collect::<Result<_>>()?;
    if free.len() > cfg.max_cylinder_arity {
        return Err(GcalcError::TensorBlowup {
            arity: free.len(),
            cap: cfg.max_cylinder_arity,
            cost: chain_cost(&axes),
        });
    }
    let table = build_first_stage(xi, g, cfg, &[], &free, &axes)?;
    let stage1 = if table.axes.len() > 1 {
        reduce_stages(xi, g, cfg, &free, table)?
    } else {
        table
    };
    ValueSurface::from_single_level(stage1.axes[0].clone(), free[0], stage1.values)
}
