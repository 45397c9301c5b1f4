//! Spatial grids, time partitions and shared numerical knobs.

use crate::error::{GcalcError, Result};
use crate::generator::SublinearGenerator;

/// Uniform one-dimensional grid with at least three nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    n_nodes: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(GcalcError::Config(format!(
                "grid bounds must be finite with x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_nodes < 3 {
            return Err(GcalcError::Config(format!(
                "grid needs at least 3 nodes, got {n_nodes}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_nodes,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Node spacing (derived).
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_nodes - 1) as f64
    }

    /// Coordinate of node `i`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_nodes);
        self.x_min + i as f64 * self.dx()
    }

    /// All node coordinates in ascending order.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Index of the center node when the node count is odd.
    pub fn center_index(&self) -> usize {
        (self.n_nodes - 1) / 2
    }

    /// Piecewise-linear interpolation of nodal `values` at `x`; outside the
    /// grid the outermost segment is extended linearly, matching the
    /// asymptotically-linear boundary closure of the solver.
    pub fn interp_linear(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes);
        let dx = self.dx();
        let pos = (x - self.x_min) / dx;
        // Clamp the segment index, not the coordinate: extrapolates linearly.
        let i = (pos.floor() as isize).clamp(0, self.n_nodes as isize - 2) as usize;
        let w = pos - i as f64;
        values[i] + w * (values[i + 1] - values[i])
    }

    /// Index of the node nearest to `x` (for exact-node reads).
    pub fn nearest_index(&self, x: f64) -> usize {
        let pos = (x - self.x_min) / self.dx();
        (pos.round() as isize).clamp(0, self.n_nodes as isize - 1) as usize
    }
}

/// Strictly increasing partition 0 = t_0 < t_1 < ... < t_n.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    times: Vec<f64>,
}

/// Relative tolerance used when matching times against partition knots.
const KNOT_TOL: f64 = 1e-9;

impl TimePartition {
    /// Build from the interior-and-final knots `t_1 < ... < t_n` (t_0 = 0 is
    /// implied and must not be included).
    pub fn from_interior(times: &[f64]) -> Result<Self> {
        let mut all = Vec::with_capacity(times.len() + 1);
        all.push(0.0);
        all.extend_from_slice(times);
        Self::new(all)
    }

    /// Build from the full knot list starting at 0.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(GcalcError::Config(
                "partition needs at least the knots 0 and T".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(GcalcError::Config(format!(
                "partition must start at 0, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1].is_finite()) || w[1] <= w[0] {
                return Err(GcalcError::Config(format!(
                    "partition times must be finite and strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Full knot list including t_0 = 0.
    pub fn knots(&self) -> &[f64] {
        &self.times
    }

    /// Number of intervals (pieces).
    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Interval `(t_k, t_{k+1}]` containing `t` (left-open convention).
    /// `t = 0` is treated as belonging to the first interval.
    pub fn locate_left_open(&self, t: f64) -> Result<usize> {
        self.check_range(t)?;
        if t <= self.times[0] {
            return Ok(0);
        }
        let tol = KNOT_TOL * self.final_time().max(1.0);
        // Largest k with t_k < t (up to tolerance at knots).
        let mut k = match self
            .times
            .binary_search_by(|probe| probe.total_cmp(&t))
        {
            Ok(i) => i.saturating_sub(1), // exactly on a knot: previous piece
            Err(i) => i - 1,
        };
        // Within tolerance of the knot above: still previous piece.
        if k + 1 < self.times.len() && (self.times[k + 1] - t).abs() <= tol {
            // t sits on knot k+1; piece k covers (t_k, t_{k+1}].
        } else if (t - self.times[k]).abs() <= tol && k > 0 {
            // t sits on knot k: the left-open interval ending there is k-1.
            k -= 1;
        }
        Ok(k.min(self.n_intervals() - 1))
    }

    /// Interval `[t_k, t_{k+1})` containing `t` (right-open convention, used
    /// by time derivatives). `t = T` is treated as belonging to the last
    /// interval.
    pub fn locate_right_open(&self, t: f64) -> Result<usize> {
        self.check_range(t)?;
        let tol = KNOT_TOL * self.final_time().max(1.0);
        let mut k = match self
            .times
            .binary_search_by(|probe| probe.total_cmp(&t))
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        // Snap to the knot just above when within tolerance.
        if k + 1 < self.times.len() && (self.times[k + 1] - t).abs() <= tol {
            k += 1;
        }
        Ok(k.min(self.n_intervals() - 1))
    }

    /// Exact-match index of a knot equal to `t` within tolerance.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let tol = KNOT_TOL * self.final_time().max(1.0);
        self.times.iter().position(|&k| (k - t).abs() <= tol)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let tol = KNOT_TOL * self.final_time().max(1.0);
        if !t.is_finite() || t < -tol || t > self.final_time() + tol {
            return Err(GcalcError::Domain(format!(
                "time {t} outside partition range [0, {}]",
                self.final_time()
            )));
        }
        Ok(())
    }
}

/// Interpolation rule tag; only piecewise-linear is implemented and callers
/// should treat the tag as a forward-compatibility hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
}

/// Shared numerical configuration.
#[derive(Debug, Clone)]
pub struct NumericsConfig {
    /// Target node spacing for automatically derived grids.
    pub dx: f64,
    /// Domain half-width in units of sigma_high * sqrt(T).
    pub domain_multiplier: f64,
    /// Fraction of the stability limit the time step may use, in (0, 1].
    pub cfl_safety: f64,
    /// Generic comparison tolerance for structural identities.
    pub tolerance: f64,
    /// Largest cylinder arity the tensor recursion will accept.
    pub max_cylinder_arity: usize,
    /// Parameter axes keep every `param_stride`-th state node.
    pub param_stride: usize,
    /// Interpolation rule for value tables and surfaces.
    pub interpolation: Interpolation,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            dx: 0.05,
            domain_multiplier: 6.0,
            cfl_safety: 0.9,
            tolerance: 1e-8,
            max_cylinder_arity: 3,
            param_stride: 2,
            interpolation: Interpolation::Linear,
        }
    }
}

impl NumericsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(GcalcError::Config(format!("dx must be positive, got {}", self.dx)));
        }
        if !(self.domain_multiplier.is_finite() && self.domain_multiplier > 0.0) {
            return Err(GcalcError::Config(format!(
                "domain_multiplier must be positive, got {}",
                self.domain_multiplier
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(GcalcError::Config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if self.max_cylinder_arity == 0 || self.param_stride == 0 {
            return Err(GcalcError::Config(
                "max_cylinder_arity and param_stride must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Default solve domain: centered on the evaluation point with half-width
/// `multiplier * sigma_high * sqrt(horizon)`, which keeps boundary-closure
/// error negligible at the center. The node count is derived from `cfg.dx`
/// and forced odd so the center is itself a node.
pub fn default_domain(
    g: &SublinearGenerator,
    center: f64,
    horizon: f64,
    cfg: &NumericsConfig,
) -> Result<SpaceGrid> {
    cfg.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(GcalcError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let (_, sh) = g.sigma_band();
    let half = cfg.domain_multiplier * sh.sqrt() * horizon.sqrt();
    let half_steps = (half / cfg.dx).ceil().max(1.0) as usize;
    SpaceGrid::new(
        center - half_steps as f64 * cfg.dx,
        center + half_steps as f64 * cfg.dx,
        2 * half_steps + 1,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_grid_spacing_and_nodes() {
        let g = SpaceGrid::new(-6.0, 6.0, 1201).unwrap();
        assert!((g.dx() - 0.01).abs() < 1e-15);
        assert_eq!(g.center_index(), 600);
        assert!((g.node(600)).abs() < 1e-12);
        assert!(SpaceGrid::new(1.0, -1.0, 11).is_err());
        assert!(SpaceGrid::new(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn test_grid_interp_linear_inside_and_extrapolated() {
        let g = SpaceGrid::new(0.0, 1.0, 3).unwrap();
        let vals = [0.0, 1.0, 4.0];
        assert!((g.interp_linear(&vals, 0.25) - 0.5).abs() < 1e-15);
        assert!((g.interp_linear(&vals, 0.75) - 2.5).abs() < 1e-15);
        // Linear extension of the outermost segments.
        assert!((g.interp_linear(&vals, 1.5) - 7.0).abs() < 1e-14);
        assert!((g.interp_linear(&vals, -0.5) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn test_grid_default_domain_bounds() {
        let cfg = NumericsConfig {
            dx: 0.01,
            ..Default::default()
        };
        let g = SublinearGenerator::standard(1.0, 1.0).unwrap();
        let grid = default_domain(&g, 0.0, 1.0, &cfg).unwrap();
        assert!((grid.x_min() + 6.0).abs() < 1e-12);
        assert!((grid.x_max() - 6.0).abs() < 1e-12);
        assert_eq!(grid.n_nodes(), 1201);

        let g4 = SublinearGenerator::standard(0.25, 4.0).unwrap();
        let grid4 = default_domain(&g4, 0.0, 1.0, &cfg).unwrap();
        assert!((grid4.x_max() - 12.0).abs() < 1e-12);

        let grid_shift = default_domain(&g, 1.0, 0.25, &cfg).unwrap();
        assert!((grid_shift.x_min() + 2.0).abs() < 1e-12);
        assert!((grid_shift.x_max() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn test_partition_validation() {
        assert!(TimePartition::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(TimePartition::new(vec![0.1, 0.5]).is_err());
        assert!(TimePartition::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimePartition::new(vec![0.0]).is_err());
        assert!(TimePartition::from_interior(&[0.5, 1.0]).is_ok());
    }

    #[test]
    fn test_partition_locate_conventions() {
        let p = TimePartition::new(vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        // Left-open: knots belong to the interval ending there.
        assert_eq!(p.locate_left_open(0.25).unwrap(), 0);
        assert_eq!(p.locate_left_open(0.3).unwrap(), 1);
        assert_eq!(p.locate_left_open(1.0).unwrap(), 2);
        assert_eq!(p.locate_left_open(0.0).unwrap(), 0);
        // Right-open: knots belong to the interval starting there.
        assert_eq!(p.locate_right_open(0.25).unwrap(), 1);
        assert_eq!(p.locate_right_open(0.3).unwrap(), 1);
        assert_eq!(p.locate_right_open(0.0).unwrap(), 0);
        assert_eq!(p.locate_right_open(1.0).unwrap(), 2);
        assert!(p.locate_left_open(1.5).is_err());
        assert!(p.locate_right_open(-0.5).is_err());
    }

    #[test]
    fn test_partition_locate_survives_float_dust() {
        let p = TimePartition::new(vec![0.0, 0.1 + 0.2, 0.6, 1.0]).unwrap();
        // 0.30000000000000004 vs 0.3: within knot tolerance.
        assert_eq!(p.locate_left_open(0.3).unwrap(), 0);
        assert_eq!(p.locate_right_open(0.3).unwrap(), 1);
    }

    #[test]
    fn test_numerics_config_validation() {
        assert!(NumericsConfig::default().validate().is_ok());
        let bad = NumericsConfig {
            cfl_safety: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
