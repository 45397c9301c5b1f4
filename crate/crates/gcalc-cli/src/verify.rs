//! Assembly of the `verify` subcommand: the full cross-check grid plus
//! invariant spot checks (expectation anchors, sublinearity axioms,
//! martingale probes, flat-derivative path processes, Monte-Carlo
//! lower-bound contracts), reported one line per check.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use gcalc::csvfmt::fmt17;
use gcalc::cylinder::g_expectation;
use gcalc::error::Result;
use gcalc::functional::{CylinderFunctional, TerminalFunction};
use gcalc::gbsde::check_g_martingale;
use gcalc::generator::SublinearGenerator;
use gcalc::gheat::{solve_backward, steps_for, SolveOptions};
use gcalc::grid::{default_domain, NumericsConfig};
use gcalc::harness::{run_full_grid, CheckRow, CheckStatus, HarnessReport};
use gcalc::pathcalc::qn_process;
use gcalc::rng::cell_uniform;
use gcalc::scenarios::{
    constant_ladder, estimate_expectation_lower, norm_h, simulate, McConfig, SamplePath, Scenario,
};

use crate::config::{build_numerics, build_sweep, RunConfig};

fn row(check: &str, term: &str, value: f64, stderr: f64, pass: bool) -> CheckRow {
    CheckRow {
        check: check.to_string(),
        term: term.to_string(),
        value,
        stderr,
        status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
    }
}

/// Run every suite and emit the report; errors with a verification failure
/// (exit code 5 at the surface) when any line fails.
pub fn run_verify(
    run: &RunConfig,
    seed_flag: Option<u64>,
    tol_flag: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    // Verification defaults favor breadth over resolution: a coarser grid
    // than the library default and a modest path count. Config overrides
    // apply on top.
    let num = build_numerics(
        run.numerics.as_ref(),
        tol_flag,
        NumericsConfig {
            dx: 0.1,
            ..NumericsConfig::default()
        },
    );
    let mc_section = run.mc.as_ref();
    let base = McConfig {
        n_paths: 500,
        dt: 1.0 / 128.0,
        ..McConfig::default()
    };
    let mc = McConfig {
        n_paths: mc_section.and_then(|c| c.n_paths).unwrap_or(base.n_paths),
        dt: mc_section.and_then(|c| c.dt).unwrap_or(base.dt),
        seed: seed_flag
            .or(mc_section.and_then(|c| c.seed))
            .unwrap_or(base.seed),
        confidence: mc_section.and_then(|c| c.confidence).unwrap_or(base.confidence),
    };
    let sweep = build_sweep(run.sweep.as_ref());

    let mut report = run_full_grid(&sweep, &num, &mc)?;
    report.extend(band_anchor_rows(&num)?);
    report.extend(axiom_rows(&num)?);
    report.extend(martingale_rows(&num)?);
    report.extend(flat_process_rows(&mc)?);
    report.extend(lower_bound_rows(&num, &mc)?);

    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for r in &report.rows {
        writeln!(
            w,
            "[{}] {} {} value={} stderr={}",
            r.status,
            r.check,
            r.term,
            fmt17(r.value),
            fmt17(r.stderr)
        )?;
    }
    writeln!(w, "checks={} failed={}", report.rows.len(), report.n_failed())?;
    w.flush()?;

    if let Some(path) = out {
        let mut f = BufWriter::new(File::create(path)?);
        report.write_csv(&mut f)?;
        f.flush()?;
    }
    report.verify()
}

/// The squared endpoint evaluated at the horizon recovers the band edges.
fn band_anchor_rows(num: &NumericsConfig) -> Result<HarnessReport> {
    let mut report = HarnessReport::new();
    for (sl, sh) in [(1.0, 2.0), (0.25, 4.0)] {
        let g = SublinearGenerator::standard(sl, sh)?;
        let xi = CylinderFunctional::new(vec![1.0], |xs: &[f64]| xs[0] * xs[0], 2, 1.0)?;
        let upper = g_expectation(&xi, &g, num)?;
        let lower = -g_expectation(&xi.negate(), &g, num)?;
        let check = format!("band_anchor[band={sl}:{sh}]");
        report.rows.push(row(&check, "upper_gap", upper - sh, 0.0, (upper - sh).abs() <= 1e-2));
        report.rows.push(row(&check, "lower_gap", lower - sl, 0.0, (lower - sl).abs() <= 1e-2));
    }
    Ok(report)
}

/// Sublinearity axioms on deterministic random two-coordinate polynomials.
/// Pairs share observation times, hence chained grids, so the discrete
/// operator preserves the axioms to rounding.
fn axiom_rows(num: &NumericsConfig) -> Result<HarnessReport> {
    let g = SublinearGenerator::standard(1.0, 2.0)?;
    let times = vec![0.5, 1.0];
    let quad = |seed: u64, pair: u64| -> Result<CylinderFunctional> {
        let a: Vec<f64> = (0..6)
            .map(|s| 2.0 * cell_uniform(seed, pair, s) - 1.0)
            .collect();
        let coeff = a.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let a = std::sync::Arc::new(a);
        CylinderFunctional::new(
            times.clone(),
            move |xs: &[f64]| {
                a[0] + a[1] * xs[0]
                    + a[2] * xs[1]
                    + a[3] * xs[0] * xs[1]
                    + a[4] * xs[0] * xs[0]
                    + a[5] * xs[1] * xs[1]
            },
            2,
            coeff,
        )
    };
    let bump = CylinderFunctional::new(times.clone(), |xs: &[f64]| 0.5 * xs[0] * xs[0], 2, 0.5)?;

    let mut report = HarnessReport::new();
    for pair in 0..3u64 {
        let xi = quad(7001, pair)?;
        let eta = quad(7002, pair)?;
        let e_xi = g_expectation(&xi, &g, num)?;
        let e_eta = g_expectation(&eta, &g, num)?;
        let e_sum = g_expectation(&xi.add(&eta)?, &g, num)?;
        let e_scaled = g_expectation(&xi.scale(1.25), &g, num)?;
        let e_shift = g_expectation(&xi.add_constant(0.75), &g, num)?;
        let e_plus = g_expectation(&xi.add(&bump)?, &g, num)?;
        let scale = 1.0 + e_xi.abs() + e_eta.abs();
        let check = format!("axioms[pair={pair}]");
        report.rows.push(row(
            &check,
            "subadditive",
            e_xi + e_eta - e_sum,
            0.0,
            e_xi + e_eta - e_sum >= -1e-9 * scale,
        ));
        report.rows.push(row(
            &check,
            "homogeneous",
            e_scaled - 1.25 * e_xi,
            0.0,
            (e_scaled - 1.25 * e_xi).abs() <= 1e-9 * scale,
        ));
        report.rows.push(row(
            &check,
            "translates",
            e_shift - (e_xi + 0.75),
            0.0,
            (e_shift - (e_xi + 0.75)).abs() <= 1e-9 * scale,
        ));
        report.rows.push(row(
            &check,
            "monotone",
            e_plus - e_xi,
            0.0,
            e_plus - e_xi >= -1e-9 * scale,
        ));
    }
    Ok(report)
}

/// One-step conditional expectations of increment images: the compensated
/// squared increment must vanish at scheme tolerance; a deterministic drift
/// must be reported at exactly its per-step size.
fn martingale_rows(num: &NumericsConfig) -> Result<HarnessReport> {
    let g = SublinearGenerator::standard(1.0, 2.0)?;
    let states: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();

    let compensated =
        |t0: f64, t1: f64, x: f64, y: f64| 0.5 * ((y - x) * (y - x) - 2.0 * (t1 - t0));
    let mart = check_g_martingale(compensated, &g, 1.0, 8, &states, num)?;

    let drift = |t0: f64, t1: f64, _x: f64, _y: f64| -(t1 - t0);
    let drift_report = check_g_martingale(drift, &g, 1.0, 8, &states, num)?;
    let dt = 1.0 / 8.0;

    let mut report = HarnessReport::new();
    report.rows.push(row(
        "martingale[compensated_qv]",
        "max_abs",
        mart.max_abs,
        0.0,
        mart.max_abs <= 5e-3,
    ));
    report.rows.push(row(
        "martingale[decreasing_drift]",
        "max_abs_vs_step",
        drift_report.max_abs - dt,
        0.0,
        (drift_report.max_abs - dt).abs() <= 1e-12,
    ));
    Ok(report)
}

/// Dyadic squared-increment processes: time slope identically zero, second
/// space derivative identically two (checked bitwise along a path), while
/// the square-function norm of the first derivative decays with refinement.
fn flat_process_rows(mc: &McConfig) -> Result<HarnessReport> {
    let g = SublinearGenerator::standard(1.0, 2.0)?;
    let path_mc = McConfig {
        n_paths: 1,
        dt: 1.0 / 1024.0,
        ..*mc
    };
    let sc = Scenario::constant(&g, 2.0)?;
    let path = simulate(&sc, 1.0, &path_mc)?.into_iter().next().unwrap();

    let mut report = HarnessReport::new();
    let mut norms = Vec::new();
    for n in [2u32, 6, 10] {
        let q = qn_process(n, 1.0)?;
        let trace = q.along_path(&path)?;
        let mut worst_dt = 0.0f64;
        let mut worst_dxx = 0.0f64;
        for i in 0..path.n_steps() {
            worst_dt = worst_dt.max(trace.d_t(i).abs());
            worst_dxx = worst_dxx.max((trace.d_xx(i) - 2.0).abs());
        }
        let check = format!("flat_process[n={n}]");
        report.rows.push(row(&check, "time_slope", worst_dt, 0.0, worst_dt == 0.0));
        report.rows.push(row(&check, "curvature_minus_two", worst_dxx, 0.0, worst_dxx == 0.0));

        // First-derivative integrand along any path: twice the distance from
        // the last dyadic knot value. Sampled at 2^-13 so every knot interval
        // carries interior evaluation points even at the finest level.
        let shift = 13 - n;
        let integrand = move |p: &SamplePath, i: usize| {
            let knot = (i >> shift) << shift;
            2.0 * (p.b[i] - p.b[knot])
        };
        let norm_mc = McConfig {
            n_paths: mc.n_paths.min(300),
            dt: 1.0 / 8192.0,
            ..*mc
        };
        let est = norm_h(&integrand, 2.0, &g, 1.0, &norm_mc)?;
        report.rows.push(row(
            &check,
            "slope_h_norm",
            est.norm,
            est.stderr,
            n < 10 || est.norm <= 0.1,
        ));
        norms.push(est.norm);
    }
    report.rows.push(row(
        "flat_process[n=2:6:10]",
        "h_norm_decreasing",
        norms[2] - norms[0],
        0.0,
        norms[0] > norms[1] && norms[1] > norms[2],
    ));
    Ok(report)
}

/// Scenario estimates are one-sided: at most the backward-solve value plus
/// the confidence band; for the convex payoff the constant ladder alone
/// gets within one percent (plus the statistical band).
fn lower_bound_rows(num: &NumericsConfig, mc: &McConfig) -> Result<HarnessReport> {
    let g = SublinearGenerator::standard(1.0, 2.0)?;
    let family = constant_ladder(&g, 5)?;
    let payoffs: [(&str, TerminalFunction); 3] = [
        ("square", TerminalFunction::polynomial(&[0.0, 0.0, 1.0])),
        ("cos", TerminalFunction::cosine()),
        ("call", TerminalFunction::call(0.5)),
    ];
    let grid = default_domain(&g, 0.0, 1.0, num)?;
    let mut report = HarnessReport::new();
    for (name, term) in payoffs {
        let n = steps_for(&g, None, &grid, 1.0, num.cfl_safety);
        let opts = SolveOptions::ends_only(0.0, 1.0, n).with_cfl_safety(num.cfl_safety);
        let pde = solve_backward(&g, &term, None, &grid, &opts)?.start_center_value();
        let payoff = move |path: &SamplePath| term.eval(path.b[path.n_steps()]);
        let est = estimate_expectation_lower(&payoff, &family, 1.0, mc)?;
        let check = format!("mc_lower_bound[payoff={name}]");
        let slack = pde + mc.confidence * est.stderr - est.value;
        report.rows.push(row(
            &check,
            "estimate_below_solve",
            slack,
            est.stderr,
            slack >= -1e-9 * (1.0 + pde.abs()),
        ));
        if name == "square" {
            let gap = pde - est.value;
            report.rows.push(row(
                &check,
                "convex_gap",
                gap,
                est.stderr,
                gap <= 0.01 * pde + mc.confidence * est.stderr,
            ));
        }
    }
    Ok(report)
}
