//! Markovian backward-SDE layer on top of the band solver: solve the
//! semilinear equation through the backward-PDE correspondence, extract the
//! pathwise processes `(Y, Z, eta, K)` along sampled paths, and probe
//! martingale structure under the sublinear expectation with local one-step
//! solves.
//!
//! The compensator `K` is produced in two forms. The strong form accumulates
//! `(1/2) eta d<B> - G(eta) dt` directly; the weak form is the residual of
//! the value process after removing the driver integral and the stochastic
//! integral, shifted so both start at zero. They estimate the same process
//! and their gap shrinks with the step, which the tests assert; the weak
//! form only exists when the driver ignores the second derivative.

use std::io::Write;
use std::sync::Arc;

use crate::error::{GcalcError, Result};
use crate::functional::TerminalFunction;
use crate::generator::SublinearGenerator;
use crate::gheat::{solve_backward, steps_for, MarkovDriver, SolveOptions, ValueSurface};
use crate::grid::{default_domain, NumericsConfig, SpaceGrid};
use crate::parallel::map_indexed;
use crate::scenarios::SamplePath;

/// Value surface of a backward solve together with its tabulated first and
/// second space-derivative surfaces (shared grid and stored times).
#[derive(Debug, Clone)]
pub struct BsdeSurfaces {
    pub value: ValueSurface,
    pub slope: ValueSurface,
    pub curvature: ValueSurface,
}

impl BsdeSurfaces {
    /// Value at the solve start in the grid center, `u(0, 0)` for the
    /// standard setup.
    pub fn y0(&self) -> f64 {
        self.value.start_center_value()
    }
}

/// Solve the semilinear band equation backward from `terminal` over
/// `[0, horizon]` and tabulate the solution with `n_stored` uniform stored
/// steps. The internal step count is the smallest multiple of `n_stored`
/// admitted by the stability bound, so stored levels land exactly on the
/// requested resolution (and hence on simulation grids that share it).
pub fn solve_markovian_gbsde(
    g: &SublinearGenerator,
    driver: Option<&MarkovDriver>,
    terminal: &TerminalFunction,
    grid: &SpaceGrid,
    horizon: f64,
    n_stored: usize,
    cfl_safety: f64,
) -> Result<BsdeSurfaces> {
    if n_stored == 0 {
        return Err(GcalcError::Config("n_stored must be positive".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(GcalcError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n_min = steps_for(g, driver, grid, horizon, cfl_safety);
    let per_stored = n_min.div_ceil(n_stored).max(1);
    let n_steps = per_stored * n_stored;
    let opts = SolveOptions {
        t_start: 0.0,
        t_end: horizon,
        n_steps,
        cfl_safety,
        store_stride: per_stored,
    };
    let value = solve_backward(g, terminal, driver, grid, &opts)?;
    let times = value.times().to_vec();
    let slope_rows: Vec<Vec<f64>> = (0..value.n_levels()).map(|l| value.dx_level(l)).collect();
    let curvature_rows: Vec<Vec<f64>> = (0..value.n_levels()).map(|l| value.dxx_level(l)).collect();
    Ok(BsdeSurfaces {
        slope: ValueSurface::from_levels(grid.clone(), times.clone(), slope_rows)?,
        curvature: ValueSurface::from_levels(grid.clone(), times, curvature_rows)?,
        value,
    })
}

/// Classical-case specialization: requires a degenerate volatility band (the
/// generator is then linear) and a driver without curvature dependence. The
/// extracted compensator is a pure discretization residual in this case.
pub fn solve_wiener_bsde(
    g: &SublinearGenerator,
    driver: Option<&MarkovDriver>,
    terminal: &TerminalFunction,
    grid: &SpaceGrid,
    horizon: f64,
    n_stored: usize,
    cfl_safety: f64,
) -> Result<BsdeSurfaces> {
    let (sl, sh) = g.sigma_band();
    if sl != sh {
        return Err(GcalcError::Precondition(format!(
            "classical solve needs a degenerate volatility band, got [{sl}, {sh}]"
        )));
    }
    if driver.is_some_and(MarkovDriver::depends_on_w) {
        return Err(GcalcError::Precondition(
            "classical solve takes drivers f(t, x, y, z) without curvature dependence".into(),
        ));
    }
    solve_markovian_gbsde(g, driver, terminal, grid, horizon, n_stored, cfl_safety)
}

/// Pathwise backward-SDE processes extracted along one sampled path.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub path_id: u64,
    pub times: Vec<f64>,
    /// Value process `u(t, B_t)`.
    pub y: Vec<f64>,
    /// First-derivative process (the integrand of the stochastic integral).
    pub z: Vec<f64>,
    /// Second-derivative process (the compensator density).
    pub eta: Vec<f64>,
    /// Strong-form compensator `(1/2) sum eta d<B> - sum G(eta) dt`.
    pub k_strong: Vec<f64>,
    k_weak: Option<Vec<f64>>,
}

impl BsdeSolution {
    /// Weak-form compensator (value-process residual), absent when the
    /// driver depends on the second derivative.
    pub fn k_weak(&self) -> Result<&[f64]> {
        self.k_weak.as_deref().ok_or_else(|| {
            GcalcError::UnsupportedMode(
                "weak-form compensator is undefined for curvature-dependent drivers".into(),
            )
        })
    }

    pub fn has_weak(&self) -> bool {
        self.k_weak.is_some()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Read `(Y, Z, eta)` off the solved surfaces along `path` and accumulate
/// both compensator forms. The path must share the surface horizon; values
/// between stored levels are bilinearly interpolated.
pub fn extract_bsde_processes(
    surfaces: &BsdeSurfaces,
    path: &SamplePath,
    g: &SublinearGenerator,
    driver: Option<&MarkovDriver>,
) -> Result<BsdeSolution> {
    let stored = surfaces.value.times();
    let horizon = *stored.last().unwrap();
    if (path.horizon() - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(GcalcError::Precondition(format!(
            "path horizon {} does not match surface horizon {horizon}",
            path.horizon()
        )));
    }
    let n = path.n_steps();
    let mut y = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n + 1);
    let mut eta = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let (t, x) = (path.times[i], path.b[i]);
        y.push(surfaces.value.value_at(t, x)?);
        z.push(surfaces.slope.value_at(t, x)?);
        eta.push(surfaces.curvature.value_at(t, x)?);
    }

    let rg = g.resolved(None)?;
    let mut k_strong = Vec::with_capacity(n + 1);
    k_strong.push(0.0);
    for i in 0..n {
        let dt = path.times[i + 1] - path.times[i];
        let dqv = path.qv[i + 1] - path.qv[i];
        k_strong.push(k_strong[i] + 0.5 * eta[i] * dqv - rg.eval(eta[i]) * dt);
    }

    let k_weak = if driver.is_none_or(|d| !d.depends_on_w()) {
        let mut acc_f = 0.0;
        let mut acc_s = 0.0;
        let mut kw = Vec::with_capacity(n + 1);
        kw.push(0.0);
        for i in 0..n {
            let dt = path.times[i + 1] - path.times[i];
            let db = path.b[i + 1] - path.b[i];
            if let Some(d) = driver {
                acc_f += d.eval(path.times[i], path.b[i], y[i], z[i], eta[i]) * dt;
            }
            acc_s += z[i] * db;
            kw.push(y[i + 1] - y[0] + acc_f - acc_s);
        }
        Some(kw)
    } else {
        None
    };

    Ok(BsdeSolution {
        path_id: path.path_id,
        times: path.times.as_ref().clone(),
        y,
        z,
        eta,
        k_strong,
        k_weak,
    })
}

/// Per-step residuals of the discrete backward identity
/// `Y_k = Y_{k+1} + f dt - Z dB - dK` (strong-form `K`, left-endpoint
/// integrands). A correct extraction drives these to zero with the step.
pub fn backward_residuals(
    sol: &BsdeSolution,
    path: &SamplePath,
    driver: Option<&MarkovDriver>,
) -> Result<Vec<f64>> {
    if sol.times.len() != path.times.len() || sol.path_id != path.path_id {
        return Err(GcalcError::Precondition(
            "solution and path disagree on identity or step count".into(),
        ));
    }
    let n = sol.n_steps();
    let mut res = Vec::with_capacity(n);
    for i in 0..n {
        let dt = path.times[i + 1] - path.times[i];
        let db = path.b[i + 1] - path.b[i];
        let f = driver.map_or(0.0, |d| {
            d.eval(path.times[i], path.b[i], sol.y[i], sol.z[i], sol.eta[i])
        });
        let dk = sol.k_strong[i + 1] - sol.k_strong[i];
        res.push(sol.y[i] - (sol.y[i + 1] + f * dt - sol.z[i] * db - dk));
    }
    Ok(res)
}

/// Outcome of a one-step conditional-expectation sweep over probe nodes.
#[derive(Debug, Clone)]
pub struct GMartingaleReport {
    /// Largest absolute one-step conditional expectation of the increment.
    pub max_abs: f64,
    pub mean_abs: f64,
    pub worst_time: f64,
    pub worst_state: f64,
    pub n_probes: usize,
}

/// Probe whether an increment structure is a martingale under the band
/// expectation: for each probe `(t_k, x)`, the conditional expectation of
/// the step increment is computed by a local backward solve on
/// `[t_k, t_{k+1}]` whose terminal is the increment as a function of the
/// step's end state. A true martingale reports at most the scheme
/// tolerance; a drifting process reports the magnitude of its drift per
/// step. The closure receives `(t_start, t_end, x_start, x_end)`.
pub fn check_g_martingale(
    increment: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    g: &SublinearGenerator,
    horizon: f64,
    n_steps: usize,
    states: &[f64],
    cfg: &NumericsConfig,
) -> Result<GMartingaleReport> {
    if n_steps == 0 || states.is_empty() {
        return Err(GcalcError::Config(
            "martingale check needs at least one step and one probe state".into(),
        ));
    }
    cfg.validate()?;
    let increment: IncrementFn = Arc::new(increment);
    let dt = horizon / n_steps as f64;
    let n_probes = n_steps * states.len();
    let values = map_indexed(n_probes, |flat| -> Result<f64> {
        let k = flat / states.len();
        let x = states[flat % states.len()];
        let t0 = k as f64 * dt;
        let t1 = t0 + dt;
        let inc = Arc::clone(&increment);
        let terminal = TerminalFunction::new(move |y| inc(t0, t1, x, y), 2, 1.0);
        let grid = default_domain(g, x, dt, cfg)?;
        let n_local = steps_for(g, None, &grid, dt, cfg.cfl_safety);
        let opts = SolveOptions::ends_only(t0, t1, n_local).with_cfl_safety(cfg.cfl_safety);
        Ok(solve_backward(g, &terminal, None, &grid, &opts)?.start_center_value())
    });
    let mut report = GMartingaleReport {
        max_abs: 0.0,
        mean_abs: 0.0,
        worst_time: 0.0,
        worst_state: 0.0,
        n_probes,
    };
    let mut abs_values = Vec::with_capacity(n_probes);
    for (flat, v) in values.into_iter().enumerate() {
        let v = v?;
        abs_values.push(v.abs());
        if v.abs() > report.max_abs {
            report.max_abs = v.abs();
            report.worst_time = (flat / states.len()) as f64 * dt;
            report.worst_state = states[flat % states.len()];
        }
    }
    report.mean_abs = crate::parallel::pairwise_mean(&abs_values);
    Ok(report)
}

/// Uniform probe states spanning the diffusion scale of the band over the
/// horizon (odd count, centered at the origin).
pub fn probe_states(g: &SublinearGenerator, horizon: f64, n: usize) -> Vec<f64> {
    let (_, sh) = g.sigma_band();
    let half = 1.5 * sh.sqrt() * horizon.sqrt();
    let n = n.max(1) | 1;
    (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// CSV emission of extracted solutions: `path_id,t,y,z,eta,k_strong,k_weak`.
/// All solutions must carry the weak form (curvature-dependent drivers have
/// no defined weak column).
pub fn write_bsde_csv<W: Write>(solutions: &[BsdeSolution], out: &mut W) -> Result<()> {
    use crate::csvfmt::fmt17;
    writeln!(out, "path_id,t,y,z,eta,k_strong,k_weak")?;
    for sol in solutions {
        let kw = sol.k_weak()?;
        #[allow(clippy::needless_range_loop)]
        for i in 0..sol.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                sol.path_id,
                fmt17(sol.times[i]),
                fmt17(sol.y[i]),
                fmt17(sol.z[i]),
                fmt17(sol.eta[i]),
                fmt17(sol.k_strong[i]),
                fmt17(kw[i]),
            )?;
        }
    }
    Ok(())
}

/// Convenience wrapper used by tests and the harness: quadratic terminal and
/// shared default grid for a band over `[0, horizon]`.
pub fn quadratic_setup(
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &NumericsConfig,
) -> Result<(TerminalFunction, SpaceGrid)> {
    let terminal = TerminalFunction::polynomial(&[0.0, 0.0, 1.0]);
    let grid = default_domain(g, 0.0, horizon, cfg)?;
    Ok((terminal, grid))
}

/// `Arc`-backed driver builders for the worked examples.
pub fn discount_driver(rate: f64) -> Result<MarkovDriver> {
    MarkovDriver::new(move |_t, _x, y, _z, _w| -rate * y, rate.abs(), 0.0, 0.0)
}

pub fn drift_driver(mu: f64) -> Result<MarkovDriver> {
    MarkovDriver::new(move |_t, _x, _y, z, _w| mu * z, 0.0, mu.abs(), 0.0)
}

/// Shared closure type alias for increment probes built by the harness.
pub type IncrementFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::pairwise_mean;
    use crate::scenarios::{simulate, McConfig, Scenario};

    fn band12() -> SublinearGenerator {
        SublinearGenerator::standard(1.0, 2.0).unwrap()
    }

    fn mc(n_paths: usize, dt: f64, seed: u64) -> McConfig {
        McConfig {
            n_paths,
            dt,
            seed,
            confidence: 3.0,
        }
    }

    fn rms(values: &[f64]) -> f64 {
        let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
        pairwise_mean(&sq).sqrt()
    }

    #[test]
    fn test_gbsde_markovian_example_values() {
        let cfg = NumericsConfig::default();

        // Driverless convex terminal: the upper band variance.
        let g = band12();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let s = solve_markovian_gbsde(&g, None, &term, &grid, 1.0, 256, 0.9).unwrap();
        assert!((s.y0() - 2.0).abs() < 5e-3, "convex value {}", s.y0());

        // Discounting at five percent scales the convex value.
        let discount = discount_driver(0.05).unwrap();
        let s = solve_markovian_gbsde(&g, Some(&discount), &term, &grid, 1.0, 256, 0.9).unwrap();
        let want = (-0.05f64).exp() * 2.0;
        assert!((s.y0() - want).abs() < 1e-2, "{} vs {want}", s.y0());

        // Unit drift in z on a degenerate band has the closed form
        // (x + mu (T - t))^2 + T - t.
        let g1 = SublinearGenerator::standard(1.0, 1.0).unwrap();
        let (term, grid) = quadratic_setup(&g1, 1.0, &cfg).unwrap();
        let drift = drift_driver(1.0).unwrap();
        let s = solve_markovian_gbsde(&g1, Some(&drift), &term, &grid, 1.0, 256, 0.9).unwrap();
        assert!((s.y0() - 2.0).abs() < 1e-2, "drift value {}", s.y0());
    }

    #[test]
    fn test_gbsde_surface_triplet_derivatives() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let s = solve_markovian_gbsde(&g, None, &term, &grid, 1.0, 64, 0.9).unwrap();
        for &(t, x) in &[(0.0, 0.0), (0.25, 1.0), (0.5, -2.0), (0.75, 0.5)] {
            let slope = s.slope.value_at(t, x).unwrap();
            let curv = s.curvature.value_at(t, x).unwrap();
            assert!((slope - 2.0 * x).abs() < 1e-6, "slope {slope} at ({t}, {x})");
            assert!((curv - 2.0).abs() < 1e-6, "curvature {curv} at ({t}, {x})");
        }
    }

    #[test]
    fn test_gbsde_strong_k_oracle_and_monotonicity() {
        // Convex driverless case: eta = 2 and K = <B> - sigma_high_sq t.
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let s = solve_markovian_gbsde(&g, None, &term, &grid, 1.0, 256, 0.9).unwrap();

        for sigma_sq in [1.0, 1.5] {
            let sc = Scenario::constant(&g, sigma_sq).unwrap();
            let paths = simulate(&sc, 1.0, &mc(8, 1.0 / 256.0, 31)).unwrap();
            for path in &paths {
                let sol = extract_bsde_processes(&s, path, &g, None).unwrap();
                assert_eq!(sol.k_strong[0], 0.0);
                let mut max_pos_inc: f64 = 0.0;
                for i in 0..sol.n_steps() {
                    max_pos_inc = max_pos_inc.max(sol.k_strong[i + 1] - sol.k_strong[i]);
                    let want = path.qv[i] - 2.0 * path.times[i];
                    assert!(
                        (sol.k_strong[i] - want).abs() < 1e-6,
                        "K oracle at step {i}: {} vs {want}",
                        sol.k_strong[i]
                    );
                }
                assert!(max_pos_inc <= 1e-10, "positive increment {max_pos_inc}");
            }
        }

        // Under the extremal control the compensator vanishes identically.
        let extremal = Scenario::constant(&g, 2.0).unwrap();
        let paths = simulate(&extremal, 1.0, &mc(4, 1.0 / 256.0, 32)).unwrap();
        for path in &paths {
            let sol = extract_bsde_processes(&s, path, &g, None).unwrap();
            let worst = sol.k_strong.iter().fold(0.0f64, |m, k| m.max(k.abs()));
            assert!(worst <= 1e-10, "extremal-control K magnitude {worst}");
        }
    }

    #[test]
    fn test_gbsde_weak_strong_gap_shrinks() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let sc = Scenario::piecewise(&g, vec![0.5], vec![2.0, 1.0]).unwrap();

        let gap_rms = |n: usize| {
            let s = solve_markovian_gbsde(&g, None, &term, &grid, 1.0, n, 0.9).unwrap();
            let paths = simulate(&sc, 1.0, &mc(64, 1.0 / n as f64, 77)).unwrap();
            let mut sq = Vec::new();
            for path in &paths {
                let sol = extract_bsde_processes(&s, path, &g, None).unwrap();
                let kw = sol.k_weak().unwrap();
                for (ks, w) in sol.k_strong.iter().zip(kw) {
                    let d = ks - w;
                    sq.push(d * d);
                }
            }
            pairwise_mean(&sq).sqrt()
        };
        let coarse = gap_rms(256);
        let fine = gap_rms(1024);
        // c = gap / sqrt(dt) must not grow under refinement.
        let c_coarse = coarse / (1.0f64 / 256.0).sqrt();
        let c_fine = fine / (1.0f64 / 1024.0).sqrt();
        assert!(fine < coarse, "gap did not shrink: {coarse} -> {fine}");
        assert!(
            c_fine <= c_coarse * 1.1,
            "normalized gap grew: {c_coarse} -> {c_fine}"
        );
    }

    #[test]
    fn test_gbsde_weak_form_unsupported_for_curvature_driver() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let wdriver = MarkovDriver::new(|_t, _x, _y, _z, w| 0.1 * w, 0.0, 0.0, 0.1).unwrap();
        let s = solve_markovian_gbsde(&g, Some(&wdriver), &term, &grid, 1.0, 128, 0.9).unwrap();
        let sc = Scenario::constant(&g, 1.5).unwrap();
        let path = &simulate(&sc, 1.0, &mc(1, 1.0 / 128.0, 5)).unwrap()[0];
        let sol = extract_bsde_processes(&s, path, &g, Some(&wdriver)).unwrap();
        assert!(!sol.has_weak());
        assert!(matches!(
            sol.k_weak().unwrap_err(),
            GcalcError::UnsupportedMode(_)
        ));
        let mut sink = Vec::new();
        assert!(write_bsde_csv(&[sol], &mut sink).is_err());
    }

    #[test]
    fn test_gbsde_backward_identity_residual_scales() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let discount = discount_driver(0.05).unwrap();
        let sc = Scenario::constant(&g, 1.5).unwrap();

        let residual_rms = |n: usize| {
            let s =
                solve_markovian_gbsde(&g, Some(&discount), &term, &grid, 1.0, n, 0.9).unwrap();
            let paths = simulate(&sc, 1.0, &mc(64, 1.0 / n as f64, 41)).unwrap();
            let mut all = Vec::new();
            for path in &paths {
                let sol = extract_bsde_processes(&s, path, &g, Some(&discount)).unwrap();
                all.extend(backward_residuals(&sol, path, Some(&discount)).unwrap());
            }
            rms(&all)
        };
        let coarse = residual_rms(256);
        let fine = residual_rms(1024);
        let c_coarse = coarse / (1.0f64 / 256.0).sqrt();
        let c_fine = fine / (1.0f64 / 1024.0).sqrt();
        assert!(
            c_fine <= c_coarse,
            "residual constant grew: {c_coarse} -> {c_fine}"
        );
    }

    #[test]
    fn test_gbsde_martingale_check_example_increment() {
        // Increment image of the compensated quadratic-variation martingale
        // with unit density: (1/2)((dB)^2 - sigma_high_sq dt).
        let g = band12();
        let cfg = NumericsConfig::default();
        let inc = |t0: f64, t1: f64, x: f64, y: f64| 0.5 * ((y - x) * (y - x) - 2.0 * (t1 - t0));
        let states: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let report = check_g_martingale(inc, &g, 1.0, 8, &states, &cfg).unwrap();
        assert!(report.max_abs <= 5e-3, "martingale report {}", report.max_abs);
        assert_eq!(report.n_probes, 8 * 21);
    }

    #[test]
    fn test_gbsde_martingale_check_flags_decreasing_process() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let inc = |t0: f64, t1: f64, _x: f64, _y: f64| -(t1 - t0);
        let states = probe_states(&g, 1.0, 5);
        let n_steps = 16;
        let report = check_g_martingale(inc, &g, 1.0, n_steps, &states, &cfg).unwrap();
        let dt = 1.0 / n_steps as f64;
        assert!(
            (report.max_abs - dt).abs() < 1e-12 * (1.0 + dt),
            "drift report {} vs step {dt}",
            report.max_abs
        );
        assert!((report.mean_abs - dt).abs() < 1e-12 * (1.0 + dt));
    }

    #[test]
    fn test_gbsde_wiener_example_values() {
        let g = SublinearGenerator::linear();
        let cfg = NumericsConfig {
            dx: 0.025,
            ..NumericsConfig::default()
        };
        let grid = default_domain(&g, 0.0, 1.0, &cfg).unwrap();

        let s = solve_wiener_bsde(&g, None, &TerminalFunction::cosine(), &grid, 1.0, 256, 0.9)
            .unwrap();
        let want = (-0.5f64).exp();
        assert!((s.y0() - want).abs() < 1e-3, "{} vs {want}", s.y0());

        let minus_y = MarkovDriver::new(|_t, _x, y, _z, _w| -y, 1.0, 0.0, 0.0).unwrap();
        let s = solve_wiener_bsde(
            &g,
            Some(&minus_y),
            &TerminalFunction::constant(1.0),
            &grid,
            1.0,
            256,
            0.9,
        )
        .unwrap();
        let want = (-1.0f64).exp();
        assert!((s.y0() - want).abs() < 1e-3, "{} vs {want}", s.y0());
    }

    #[test]
    fn test_gbsde_wiener_linear_payoff_extraction() {
        let g = SublinearGenerator::linear();
        let cfg = NumericsConfig::default();
        let grid = default_domain(&g, 0.0, 1.0, &cfg).unwrap();
        let term = TerminalFunction::polynomial(&[0.0, 1.0]);
        let s = solve_wiener_bsde(&g, None, &term, &grid, 1.0, 128, 0.9).unwrap();
        let sc = Scenario::constant(&g, 1.0).unwrap();
        let paths = simulate(&sc, 1.0, &mc(3, 1.0 / 128.0, 17)).unwrap();
        for path in &paths {
            let sol = extract_bsde_processes(&s, path, &g, None).unwrap();
            for i in 0..=sol.n_steps() {
                assert!((sol.z[i] - 1.0).abs() < 1e-9, "slope {}", sol.z[i]);
                assert!((sol.y[i] - path.b[i]).abs() < 1e-9, "value vs path state");
            }
            let worst_k = sol.k_strong.iter().fold(0.0f64, |m, k| m.max(k.abs()));
            assert!(worst_k <= 1e-10, "classical-case K magnitude {worst_k}");
        }
    }

    #[test]
    fn test_gbsde_wiener_rejects_band_and_curvature() {
        let cfg = NumericsConfig::default();
        let band = band12();
        let grid = default_domain(&band, 0.0, 1.0, &cfg).unwrap();
        let term = TerminalFunction::cosine();
        assert!(matches!(
            solve_wiener_bsde(&band, None, &term, &grid, 1.0, 64, 0.9).unwrap_err(),
            GcalcError::Precondition(_)
        ));
        let g1 = SublinearGenerator::linear();
        let wdriver = MarkovDriver::new(|_t, _x, _y, _z, w| w, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            solve_wiener_bsde(&g1, Some(&wdriver), &term, &grid, 1.0, 64, 0.9).unwrap_err(),
            GcalcError::Precondition(_)
        ));
    }

    #[test]
    fn test_gbsde_scheme_operator_identity() {
        // Stored levels of a classical solve satisfy the discrete equation
        // forward difference in time plus half the second difference = 0 at
        // interior nodes (the boundary closure uses a different stencil).
        let g = SublinearGenerator::linear();
        let cfg = NumericsConfig::default();
        let grid = default_domain(&g, 0.0, 1.0, &cfg).unwrap();
        let n = steps_for(&g, None, &grid, 1.0, 0.9);
        let s = solve_wiener_bsde(&g, None, &TerminalFunction::cosine(), &grid, 1.0, n, 0.9)
            .unwrap();
        let times = s.value.times();
        let dt = times[1] - times[0];
        let nn = grid.n_nodes();
        for l in 0..times.len() - 1 {
            let below = s.value.level(l);
            let above = s.value.level(l + 1);
            let curv = s.value.dxx_level(l + 1);
            for j in 2..nn - 2 {
                let resid = (above[j] - below[j]) / dt + 0.5 * curv[j];
                assert!(
                    resid.abs() < 1e-9,
                    "operator identity residual {resid} at level {l}, node {j}"
                );
            }
        }
    }

    #[test]
    fn test_gbsde_terminal_match_and_csv_shape() {
        let g = band12();
        let cfg = NumericsConfig::default();
        let (term, grid) = quadratic_setup(&g, 1.0, &cfg).unwrap();
        let s = solve_markovian_gbsde(&g, None, &term, &grid, 1.0, 64, 0.9).unwrap();
        let sc = Scenario::constant(&g, 1.5).unwrap();
        let path = &simulate(&sc, 1.0, &mc(1, 1.0 / 64.0, 3)).unwrap()[0];
        let sol = extract_bsde_processes(&s, path, &g, None).unwrap();
        let b_t = path.b[path.n_steps()];
        assert!(
            (sol.y[sol.n_steps()] - term.eval(b_t)).abs() < 5e-3,
            "terminal value mismatch"
        );

        let mut sink = Vec::new();
        write_bsde_csv(std::slice::from_ref(&sol), &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path_id,t,y,z,eta,k_strong,k_weak");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 65);
        assert!(rows.iter().all(|r| r.split(',').count() == 7));
    }
}
