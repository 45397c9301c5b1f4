//! Cross-checked reference computations: three worked compensator values and
//! a three-term inequality chain, each evaluated by two independent routes
//! (closed form or backward solve on one side, scenario Monte-Carlo on the
//! other) with per-check pass/fail reporting.
//!
//! All hard assertions are made for constant weight processes, where exact
//! closed forms exist. Step-process weights are exposed through
//! [`example1_general`], which only asserts agreement between two
//! independently seeded Monte-Carlo runs (both are one-sided lower-bound
//! estimates, so no closed-form anchor is claimed for them).

use std::io::Write;
use std::sync::Arc;

use crate::csvfmt::fmt17;
use crate::error::{GcalcError, Result};
use crate::functional::{StepProcess, TerminalFunction};
use crate::generator::{EtaSource, SublinearGenerator};
use crate::gheat::{solve_backward, steps_for, MarkovDriver, SolveOptions};
use crate::grid::{default_domain, NumericsConfig};
use crate::parallel::map_indexed;
use crate::scenarios::{
    bang_bang_family, constant_ladder, delta_n, estimate_expectation_lower, step_integrand,
    McConfig, McEstimate, SamplePath,
};

/// Outcome of one reported check line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
}

impl std::fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
        })
    }
}

/// One line of the verification report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    /// Which run produced the line (no commas; CSV field).
    pub check: String,
    /// Which quantity or comparison the line carries.
    pub term: String,
    pub value: f64,
    pub stderr: f64,
    pub status: CheckStatus,
}

/// Ordered collection of check lines with CSV emission.
#[derive(Debug, Clone, Default)]
pub struct HarnessReport {
    pub rows: Vec<CheckRow>,
}

impl HarnessReport {
    pub fn new() -> Self {
        Self::default()
    }

    fn value_row(&mut self, check: &str, term: &str, value: f64, stderr: f64) {
        self.rows.push(CheckRow {
            check: check.to_string(),
            term: term.to_string(),
            value,
            stderr,
            status: CheckStatus::Pass,
        });
    }

    /// Comparison line: passes when `|gap| <= confidence * stderr + floor`,
    /// with a small absolute floor so exact (zero-variance) routes compare
    /// up to rounding instead of demanding bitwise equality.
    fn gap_row(&mut self, check: &str, term: &str, gap: f64, stderr: f64, confidence: f64, scale: f64) {
        let tol = confidence * stderr + 1e-9 * (1.0 + scale.abs());
        self.rows.push(CheckRow {
            check: check.to_string(),
            term: term.to_string(),
            value: gap,
            stderr,
            status: if gap.abs() <= tol {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
        });
    }

    /// One-sided line: passes when `value >= -(confidence * stderr + floor)`.
    fn lower_bound_row(
        &mut self,
        check: &str,
        term: &str,
        value: f64,
        stderr: f64,
        confidence: f64,
        scale: f64,
    ) {
        let tol = confidence * stderr + 1e-9 * (1.0 + scale.abs());
        self.rows.push(CheckRow {
            check: check.to_string(),
            term: term.to_string(),
            value,
            stderr,
            status: if value >= -tol {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
        });
    }

    pub fn extend(&mut self, other: HarnessReport) {
        self.rows.extend(other.rows);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.status == CheckStatus::Pass)
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status == CheckStatus::Fail).count()
    }

    /// Error out on any failed line, naming the first offender.
    pub fn verify(&self) -> Result<()> {
        if let Some(bad) = self.rows.iter().find(|r| r.status == CheckStatus::Fail) {
            return Err(GcalcError::Verification(format!(
                "{} of {} checks failed; first failure: {} / {} (value {}, stderr {})",
                self.n_failed(),
                self.rows.len(),
                bad.check,
                bad.term,
                bad.value,
                bad.stderr
            )));
        }
        Ok(())
    }

    /// Emit `check,term,value,stderr,status` with full-precision numerics.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "check,term,value,stderr,status")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.check,
                r.term,
                fmt17(r.value),
                fmt17(r.stderr),
                r.status
            )?;
        }
        Ok(())
    }
}

/// A cross-checked run: the canonical (closed-form or backward-solve) value
/// plus every check line it generated.
#[derive(Debug, Clone)]
pub struct ExampleRun {
    pub value: f64,
    pub report: HarnessReport,
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(GcalcError::Config(format!("horizon must be positive, got {t}")));
    }
    Ok(())
}

fn band_label(g: &SublinearGenerator) -> String {
    let (sl, sh) = g.sigma_band();
    format!("{sl}:{sh}")
}

/// Value of half the weighted quadratic variation at the horizon,
/// `sup E[ (eta/2) <B>_T ]`, for a constant nonnegative weight: closed form
/// `(eta/2) * sigma_high_sq * T` against the maximum over a ladder of
/// constant-rate scenarios of the Monte-Carlo mean.
pub fn example1_value(
    eta_const: f64,
    g: &SublinearGenerator,
    horizon: f64,
    mc: &McConfig,
) -> Result<ExampleRun> {
    if !(eta_const.is_finite() && eta_const >= 0.0) {
        return Err(GcalcError::Precondition(format!(
            "constant weight must be nonnegative, got {eta_const}"
        )));
    }
    check_horizon(horizon)?;
    let (_, sh) = g.sigma_band();
    let closed = 0.5 * eta_const * sh * horizon;

    let family = constant_ladder(g, 5)?;
    let payoff = move |path: &SamplePath| 0.5 * eta_const * path.qv[path.n_steps()];
    let est = estimate_expectation_lower(&payoff, &family, horizon, mc)?;

    let check = format!("example1[band={};eta={eta_const};T={horizon}]", band_label(g));
    let mut report = HarnessReport::new();
    report.value_row(&check, "closed_form", closed, 0.0);
    report.value_row(&check, "scenario_mc", est.value, est.stderr);
    report.gap_row(
        &check,
        "route_gap",
        est.value - closed,
        est.stderr,
        mc.confidence,
        closed,
    );
    Ok(ExampleRun { value: closed, report })
}

/// Step-process variant of [`example1_value`]: the weight may depend on path
/// values observed at its partition knots, so no closed form is claimed.
/// Two independently seeded Monte-Carlo sweeps over the constant-rate ladder
/// are compared instead, both being lower-bound estimates of the same value.
pub fn example1_general(
    eta: &StepProcess,
    g: &SublinearGenerator,
    horizon: f64,
    mc: &McConfig,
) -> Result<ExampleRun> {
    check_horizon(horizon)?;
    let family = constant_ladder(g, 5)?;
    let integrand = step_integrand(eta, horizon, mc)?;
    let payoff = move |path: &SamplePath| {
        let mut acc = 0.0;
        for k in 0..path.n_steps() {
            acc += 0.5 * integrand(path, k) * (path.qv[k + 1] - path.qv[k]);
        }
        acc
    };
    let est_a = estimate_expectation_lower(&payoff, &family, horizon, mc)?;
    let reseeded = McConfig {
        seed: mc.seed.wrapping_add(0x9e37_79b9),
        ..*mc
    };
    let est_b = estimate_expectation_lower(&payoff, &family, horizon, &reseeded)?;

    let check = format!("example1_general[band={};T={horizon}]", band_label(g));
    let mut report = HarnessReport::new();
    report.value_row(&check, "mc_seed_a", est_a.value, est_a.stderr);
    report.value_row(&check, "mc_seed_b", est_b.value, est_b.stderr);
    report.gap_row(
        &check,
        "seed_gap",
        est_a.value - est_b.value,
        est_a.stderr + est_b.stderr,
        mc.confidence,
        est_a.value,
    );
    Ok(ExampleRun {
        value: est_a.value,
        report,
    })
}

/// Outcome of the alternating-sign run: the backward-solve value and the
/// per-subdivision scenario estimates.
#[derive(Debug, Clone)]
pub struct Example2Run {
    /// Start value of the backward solve under the symmetrized generator.
    pub value: f64,
    /// `(n, estimate)` per requested subdivision count.
    pub estimates: Vec<(usize, McEstimate)>,
    pub report: HarnessReport,
}

/// Value of the alternating-sign weighted quadratic-variation integral
/// `sup E[ (eta/2) int delta_n(s) d<B>_s ]` for a constant weight.
///
/// Route one solves the backward equation under the symmetrized generator
/// (zero terminal), whose spatially constant solution grows by the
/// symmetrized-generator value of zero per unit time. Route two estimates
/// the integral with sign-aligned bang-bang scenarios for each `n`. Constant
/// weights make the value independent of `n`, which is asserted per level.
///
/// Subdivision counts must be even (equal signed time in both phases; odd
/// counts leave a desk-scale imbalance of order `T/n`) and must align with
/// the simulation grid (`n` divides the step count).
pub fn example2_value(
    eta_const: f64,
    g: &SublinearGenerator,
    horizon: f64,
    n_levels: &[usize],
    cfg: &NumericsConfig,
    mc: &McConfig,
) -> Result<Example2Run> {
    if !eta_const.is_finite() {
        return Err(GcalcError::Precondition(format!(
            "constant weight must be finite, got {eta_const}"
        )));
    }
    check_horizon(horizon)?;
    if n_levels.is_empty() {
        return Err(GcalcError::Config("need at least one subdivision count".into()));
    }
    let n_steps = mc.n_steps(horizon)?;
    for &n in n_levels {
        if n == 0 || n % 2 != 0 {
            return Err(GcalcError::Precondition(format!(
                "subdivision counts must be positive and even, got {n}"
            )));
        }
        if n_steps % n != 0 {
            return Err(GcalcError::Config(format!(
                "subdivision count {n} does not divide the {n_steps} simulation steps"
            )));
        }
    }

    let (sl, sh) = g.sigma_band();
    let sym = SublinearGenerator::eta_symmetrized(sl, sh, EtaSource::Constant(eta_const))?;
    let grid = default_domain(&sym, 0.0, horizon, cfg)?;
    let zero = TerminalFunction::constant(0.0);
    let n_pde = steps_for(&sym, None, &grid, horizon, cfg.cfl_safety);
    let opts =
        SolveOptions::ends_only(0.0, horizon, n_pde).with_cfl_safety(cfg.cfl_safety);
    let pde_value = solve_backward(&sym, &zero, None, &grid, &opts)?.start_center_value();
    let closed = 0.25 * eta_const.abs() * (sh - sl) * horizon;

    let check = format!(
        "example2[band={};eta={eta_const};T={horizon}]",
        band_label(g)
    );
    let mut report = HarnessReport::new();
    report.value_row(&check, "pde", pde_value, 0.0);
    report.gap_row(&check, "pde_vs_closed", pde_value - closed, 0.0, mc.confidence, closed);

    let mut estimates = Vec::with_capacity(n_levels.len());
    for &n in n_levels {
        let family = bang_bang_family(g, n, horizon)?;
        let payoff = move |path: &SamplePath| {
            let mut acc = 0.0;
            for k in 0..path.n_steps() {
                let mid = 0.5 * (path.times[k] + path.times[k + 1]);
                let sign = delta_n(mid, n, path.horizon())
                    .expect("step midpoints lie strictly inside the horizon");
                acc += 0.5 * eta_const * sign * (path.qv[k + 1] - path.qv[k]);
            }
            acc
        };
        let est = estimate_expectation_lower(&payoff, &family, horizon, mc)?;
        report.value_row(&check, &format!("mc(n={n})"), est.value, est.stderr);
        report.gap_row(
            &check,
            &format!("gap(n={n})"),
            est.value - pde_value,
            est.stderr,
            mc.confidence,
            pde_value,
        );
        estimates.push((n, est));
    }
    Ok(Example2Run {
        value: pde_value,
        estimates,
        report,
    })
}

/// Value of the deterministic drift integral `E[ (eta/2) * T ]` under the
/// shrunk-band expectation: backward solve with constant source
/// `eta / 2` and zero terminal against the scenario route over the shrunk
/// band (whose integrand is path-independent). Both must give
/// `(eta / 2) * T` for any admissible shrink.
pub fn example3_value(
    eta_const: f64,
    eps: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &NumericsConfig,
    mc: &McConfig,
) -> Result<ExampleRun> {
    if !eta_const.is_finite() {
        return Err(GcalcError::Precondition(format!(
            "constant weight must be finite, got {eta_const}"
        )));
    }
    check_horizon(horizon)?;
    let (sl, sh) = g.sigma_band();
    let shrunk = SublinearGenerator::eps_shrunk(sl, sh, eps)?;
    let closed = 0.5 * eta_const * horizon;

    let source = MarkovDriver::new(move |_t, _x, _y, _z, _w| 0.5 * eta_const, 0.0, 0.0, 0.0)?;
    let grid = default_domain(&shrunk, 0.0, horizon, cfg)?;
    let zero = TerminalFunction::constant(0.0);
    let n_pde = steps_for(&shrunk, Some(&source), &grid, horizon, cfg.cfl_safety);
    let opts = SolveOptions::ends_only(0.0, horizon, n_pde).with_cfl_safety(cfg.cfl_safety);
    let pde_value =
        solve_backward(&shrunk, &zero, Some(&source), &grid, &opts)?.start_center_value();

    let family = constant_ladder(&shrunk, 3)?;
    let payoff = move |path: &SamplePath| {
        let mut acc = 0.0;
        for k in 0..path.n_steps() {
            acc += 0.5 * eta_const * (path.times[k + 1] - path.times[k]);
        }
        acc
    };
    let est = estimate_expectation_lower(&payoff, &family, horizon, mc)?;

    let check = format!(
        "example3[band={};eta={eta_const};eps={eps};T={horizon}]",
        band_label(g)
    );
    let mut report = HarnessReport::new();
    report.value_row(&check, "closed_form", closed, 0.0);
    report.value_row(&check, "pde", pde_value, 0.0);
    report.gap_row(&check, "pde_vs_closed", pde_value - closed, 0.0, mc.confidence, closed);
    report.value_row(&check, "scenario_mc", est.value, est.stderr);
    report.gap_row(
        &check,
        "mc_vs_closed",
        est.value - closed,
        est.stderr,
        mc.confidence,
        closed,
    );
    Ok(ExampleRun {
        value: pde_value,
        report,
    })
}

/// Result of the three-term chain check.
#[derive(Debug, Clone)]
pub struct CorollaryRun {
    /// Band-ratio term `gamma * |eta| * sigma_high_sq * T` (closed form).
    pub left: f64,
    /// Largest doubled alternating-sign estimate over the admitted
    /// subdivision counts.
    pub middle: f64,
    /// Shrunk-band drift term `eps * |eta| * T` (closed form).
    pub right: f64,
    pub report: HarnessReport,
}

/// Three-term inequality chain `left >= middle >= right` tying the
/// band-ratio constant to the alternating-sign value and the shrunk-band
/// drift value. The middle term maximizes the doubled scenario estimate of
/// [`example2_value`] over even subdivision counts up to `n_max` that align
/// with the simulation grid. Requires a strictly positive lower band edge.
pub fn corollary_check(
    eta_const: f64,
    g: &SublinearGenerator,
    eps: f64,
    n_max: usize,
    horizon: f64,
    cfg: &NumericsConfig,
    mc: &McConfig,
) -> Result<CorollaryRun> {
    if !eta_const.is_finite() {
        return Err(GcalcError::Precondition(format!(
            "constant weight must be finite, got {eta_const}"
        )));
    }
    check_horizon(horizon)?;
    let (_, gamma) = g.beta_gamma()?;
    let (sl, sh) = g.sigma_band();
    // Validates the shrink range even though the term itself is closed form.
    let _ = SublinearGenerator::eps_shrunk(sl, sh, eps)?;
    let abs_eta = eta_const.abs();
    let left = gamma * abs_eta * sh * horizon;
    let right = eps * abs_eta * horizon;

    let n_steps = mc.n_steps(horizon)?;
    let levels: Vec<usize> = (1..=n_max / 2)
        .map(|i| 2 * i)
        .filter(|n| n_steps % n == 0)
        .collect();
    if levels.is_empty() {
        return Err(GcalcError::Config(format!(
            "no even subdivision count up to {n_max} divides the {n_steps} simulation steps"
        )));
    }
    let run2 = example2_value(abs_eta, g, horizon, &levels, cfg, mc)?;
    let (middle, mid_stderr) = run2
        .estimates
        .iter()
        .map(|(_, e)| (2.0 * e.value, 2.0 * e.stderr))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();

    let check = format!(
        "corollary[band={};eta={eta_const};eps={eps};T={horizon}]",
        band_label(g)
    );
    let mut report = HarnessReport::new();
    report.value_row(&check, "left", left, 0.0);
    report.value_row(&check, "middle", middle, mid_stderr);
    report.value_row(&check, "right", right, 0.0);
    report.lower_bound_row(
        &check,
        "left_ge_middle",
        left - middle,
        mid_stderr,
        mc.confidence,
        left,
    );
    report.lower_bound_row(
        &check,
        "middle_ge_right",
        middle - right,
        mid_stderr,
        mc.confidence,
        middle,
    );
    Ok(CorollaryRun {
        left,
        middle,
        right,
        report,
    })
}

/// Parameter grid for [`run_full_grid`]: volatility-squared bands, constant
/// weights, subdivision counts, and the chain's largest subdivision count.
/// Shrink values sweep `{0, span/4, span/2}` of each band automatically.
#[derive(Debug, Clone)]
pub struct GridSweep {
    pub bands: Vec<(f64, f64)>,
    pub etas: Vec<f64>,
    pub n_levels: Vec<usize>,
    pub n_max: usize,
    pub horizon: f64,
}

impl Default for GridSweep {
    fn default() -> Self {
        Self {
            bands: vec![(1.0, 1.0), (1.0, 2.0), (0.25, 4.0)],
            etas: vec![0.0, 1.0, 2.0],
            n_levels: vec![2, 4, 8],
            n_max: 8,
            horizon: 1.0,
        }
    }
}

/// Run every cross-check over the full parameter grid (cells in parallel,
/// deterministic output order and values for a fixed seed).
pub fn run_full_grid(
    sweep: &GridSweep,
    cfg: &NumericsConfig,
    mc: &McConfig,
) -> Result<HarnessReport> {
    let cells: Vec<((f64, f64), f64)> = sweep
        .bands
        .iter()
        .flat_map(|&band| sweep.etas.iter().map(move |&eta| (band, eta)))
        .collect();
    let sweep = Arc::new(sweep.clone());
    let per_cell = map_indexed(cells.len(), |i| -> Result<HarnessReport> {
        let ((sl, sh), eta) = cells[i];
        let g = SublinearGenerator::standard(sl, sh)?;
        let mut report = HarnessReport::new();
        report.extend(example1_value(eta, &g, sweep.horizon, mc)?.report);
        report.extend(example2_value(eta, &g, sweep.horizon, &sweep.n_levels, cfg, mc)?.report);
        let span = sh - sl;
        let mut shrinks = vec![0.0, 0.25 * span, 0.5 * span];
        shrinks.dedup();
        for eps in shrinks {
            report.extend(example3_value(eta, eps, &g, sweep.horizon, cfg, mc)?.report);
            report.extend(
                corollary_check(eta, &g, eps, sweep.n_max, sweep.horizon, cfg, mc)?.report,
            );
        }
        Ok(report)
    });
    let mut merged = HarnessReport::new();
    for cell in per_cell {
        merged.extend(cell?);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimePartition;

    fn band12() -> SublinearGenerator {
        SublinearGenerator::standard(1.0, 2.0).unwrap()
    }

    fn quick_mc() -> McConfig {
        McConfig {
            n_paths: 400,
            dt: 1.0 / 64.0,
            seed: 9,
            confidence: 3.0,
        }
    }

    fn coarse_cfg() -> NumericsConfig {
        NumericsConfig {
            dx: 0.1,
            ..NumericsConfig::default()
        }
    }

    #[test]
    fn test_harness_example1_values() {
        let g = band12();
        let run = example1_value(1.0, &g, 1.0, &quick_mc()).unwrap();
        assert!((run.value - 1.0).abs() < 1e-12);
        assert!(run.report.all_pass(), "{:?}", run.report.rows);

        let run = example1_value(0.0, &g, 1.0, &quick_mc()).unwrap();
        assert_eq!(run.value, 0.0);
        assert!(run.report.all_pass());

        let run = example1_value(2.0, &g, 0.5, &quick_mc()).unwrap();
        assert!((run.value - 1.0).abs() < 1e-12);
        assert!(run.report.all_pass());

        assert!(matches!(
            example1_value(-1.0, &g, 1.0, &quick_mc()).unwrap_err(),
            GcalcError::Precondition(_)
        ));
    }

    #[test]
    fn test_harness_example2_values() {
        let g = band12();
        let run = example2_value(1.0, &g, 1.0, &[2, 4], &coarse_cfg(), &quick_mc()).unwrap();
        assert!((run.value - 0.25).abs() < 1e-9, "solve value {}", run.value);
        assert!(run.report.all_pass(), "{:?}", run.report.rows);
        for (_, est) in &run.estimates {
            assert!((est.value - 0.25).abs() < 1e-9, "estimate {}", est.value);
        }

        let run = example2_value(0.0, &g, 1.0, &[2], &coarse_cfg(), &quick_mc()).unwrap();
        assert!(run.value.abs() < 1e-12);
        assert!(run.report.all_pass());

        let flat = SublinearGenerator::standard(1.0, 1.0).unwrap();
        let run = example2_value(1.0, &flat, 1.0, &[2], &coarse_cfg(), &quick_mc()).unwrap();
        assert!(run.value.abs() < 1e-9);
        assert!(run.report.all_pass());

        assert!(matches!(
            example2_value(1.0, &g, 1.0, &[3], &coarse_cfg(), &quick_mc()).unwrap_err(),
            GcalcError::Precondition(_)
        ));
        assert!(matches!(
            example2_value(1.0, &g, 1.0, &[6], &coarse_cfg(), &quick_mc()).unwrap_err(),
            GcalcError::Config(_)
        ));
    }

    #[test]
    fn test_harness_example3_values() {
        let g = band12();
        let run = example3_value(1.0, 0.5, &g, 1.0, &coarse_cfg(), &quick_mc()).unwrap();
        assert!((run.value - 0.5).abs() < 1e-9, "solve value {}", run.value);
        assert!(run.report.all_pass(), "{:?}", run.report.rows);

        let run = example3_value(0.0, 0.25, &g, 1.0, &coarse_cfg(), &quick_mc()).unwrap();
        assert!(run.value.abs() < 1e-12);

        let long = McConfig {
            dt: 1.0 / 32.0,
            ..quick_mc()
        };
        let run = example3_value(3.0, 0.25, &g, 2.0, &coarse_cfg(), &long).unwrap();
        assert!((run.value - 3.0).abs() < 1e-9);
        assert!(run.report.all_pass());

        // Shrink beyond half the band span is rejected.
        assert!(example3_value(1.0, 0.6, &g, 1.0, &coarse_cfg(), &quick_mc()).is_err());
    }

    #[test]
    fn test_harness_corollary_chain() {
        let g = band12();
        let mc = McConfig {
            n_paths: 400,
            dt: 1.0 / 256.0,
            seed: 9,
            confidence: 3.0,
        };
        let run = corollary_check(1.0, &g, 0.5, 8, 1.0, &coarse_cfg(), &mc).unwrap();
        assert!((run.left - 2.0 / 3.0).abs() < 1e-12, "left {}", run.left);
        assert!((run.middle - 0.5).abs() < 1e-9, "middle {}", run.middle);
        assert!((run.right - 0.5).abs() < 1e-12, "right {}", run.right);
        assert!(run.report.all_pass(), "{:?}", run.report.rows);

        let run = corollary_check(0.0, &g, 0.5, 4, 1.0, &coarse_cfg(), &mc).unwrap();
        assert_eq!((run.left, run.middle.abs() < 1e-12, run.right), (0.0, true, 0.0));
        assert!(run.report.all_pass());

        let run = corollary_check(1.0, &g, 0.0, 4, 1.0, &coarse_cfg(), &mc).unwrap();
        assert_eq!(run.right, 0.0);
        assert!(run.report.all_pass());
    }

    #[test]
    fn test_harness_corollary_needs_positive_lower_edge() {
        let g = SublinearGenerator::standard(0.0, 1.0).unwrap();
        assert!(matches!(
            corollary_check(1.0, &g, 0.0, 4, 1.0, &coarse_cfg(), &quick_mc()).unwrap_err(),
            GcalcError::Precondition(_)
        ));
    }

    #[test]
    fn test_harness_general_step_process() {
        let g = band12();
        let part = TimePartition::new(vec![0.0, 0.5, 1.0]).unwrap();

        // Path-independent step weight.
        let flat = StepProcess::piecewise_constant(part.clone(), vec![1.0, -1.0]).unwrap();
        let run = example1_general(&flat, &g, 1.0, &quick_mc()).unwrap();
        assert!(run.report.all_pass(), "{:?}", run.report.rows);

        // Weight whose second phase looks at the observed midpoint value.
        type Coeff = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
        let coeffs: Vec<Coeff> = vec![
            Arc::new(|_: &[f64]| 1.0),
            Arc::new(|obs: &[f64]| if obs[0] >= 0.0 { 1.0 } else { -1.0 }),
        ];
        let adapted = StepProcess::new(part, coeffs, 1.0).unwrap();
        let run = example1_general(&adapted, &g, 1.0, &quick_mc()).unwrap();
        assert!(run.report.all_pass(), "{:?}", run.report.rows);
    }

    #[test]
    fn test_harness_grid_sweep_and_csv() {
        let sweep = GridSweep {
            n_levels: vec![2, 4],
            n_max: 4,
            ..GridSweep::default()
        };
        let mc = McConfig {
            n_paths: 200,
            dt: 1.0 / 64.0,
            seed: 11,
            confidence: 3.0,
        };
        let report = run_full_grid(&sweep, &coarse_cfg(), &mc).unwrap();
        assert!(report.all_pass(), "failures: {:?}",
            report.rows.iter().filter(|r| r.status == CheckStatus::Fail).collect::<Vec<_>>());
        assert!(report.rows.len() >= 20, "only {} rows", report.rows.len());
        assert!(report.verify().is_ok());

        let mut sink = Vec::new();
        report.write_csv(&mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "check,term,value,stderr,status");
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5, "bad row {line}");
            assert_eq!(fields[4], "pass");
        }
    }

    #[test]
    fn test_harness_report_flags_failures() {
        let mut report = HarnessReport::new();
        report.value_row("demo", "ok", 1.0, 0.0);
        report.gap_row("demo", "bad_gap", 0.5, 0.01, 3.0, 1.0);
        assert!(!report.all_pass());
        assert_eq!(report.n_failed(), 1);
        assert!(matches!(
            report.verify().unwrap_err(),
            GcalcError::Verification(_)
        ));
    }
}
