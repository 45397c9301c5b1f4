//! Command-line surface: backward solves, sublinear expectations, pathwise
//! process extraction, scenario simulation, and the verification suite.
//!
//! Every command reads one JSON config document (see `config`), prints a
//! short summary to stdout, and writes CSV to `--out` when given. All
//! numeric CSV fields carry 17 significant digits and row order is fully
//! determined by the inputs, so identical configs and seeds produce
//! byte-identical files at any worker count.
//!
//! Exit codes: 0 success, 2 configuration error, 3 step-size rejection,
//! 4 numerical divergence, 5 verification failure.

mod config;
mod verify;

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcalc::csvfmt::fmt17;
use gcalc::cylinder::{conditional_g_expectation, first_stage_surface, g_expectation, g_mean_bounds};
use gcalc::error::{GcalcError, Result};
use gcalc::gbsde::{extract_bsde_processes, solve_markovian_gbsde, write_bsde_csv, BsdeSolution};
use gcalc::gheat::{solve_backward, steps_for, SolveOptions};
use gcalc::grid::{default_domain, NumericsConfig};
use gcalc::parallel::{configure_workers, map_indexed};
use gcalc::scenarios::{simulate, write_paths_csv};

use crate::config::{
    build_driver, build_grid, build_mc, build_numerics, build_scenario, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "gcalc",
    version,
    about = "Volatility-band solves, sublinear expectations, pathwise extraction, simulation, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; environment variables with the
/// `GCALC_` prefix supply defaults and explicit flags win.
#[derive(Args, Debug)]
struct CommonOpts {
    /// Path to the JSON run configuration.
    #[arg(long, env = "GCALC_CONFIG")]
    config: Option<PathBuf>,
    /// CSV output path (summaries always go to stdout).
    #[arg(long, env = "GCALC_OUT")]
    out: Option<PathBuf>,
    /// Seed override for stochastic commands.
    #[arg(long, env = "GCALC_SEED")]
    seed: Option<u64>,
    /// Worker-thread count (defaults to the machine).
    #[arg(long, env = "GCALC_WORKERS")]
    workers: Option<usize>,
    /// Numerics tolerance override.
    #[arg(long, env = "GCALC_TOL")]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Backward solve of the band heat equation; value-surface CSV.
    Gheat(CommonOpts),
    /// Sublinear expectation of a cylinder functional.
    Expect(CommonOpts),
    /// Semilinear solve plus pathwise process extraction along paths.
    Bsde(CommonOpts),
    /// Simulate scenario-controlled paths.
    Simulate(CommonOpts),
    /// Run every cross-check and invariant suite.
    Verify(CommonOpts),
}

impl Command {
    fn opts(&self) -> &CommonOpts {
        match self {
            Command::Gheat(o)
            | Command::Expect(o)
            | Command::Bsde(o)
            | Command::Simulate(o)
            | Command::Verify(o) => o,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = cli.command.opts();
    if let Some(workers) = opts.workers {
        if let Err(e) = configure_workers(workers) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Gheat(o) => cmd_gheat(o),
        Command::Expect(o) => cmd_expect(o),
        Command::Bsde(o) => cmd_bsde(o),
        Command::Simulate(o) => cmd_simulate(o),
        Command::Verify(o) => {
            let run = match RunConfig::load(o.config.as_deref()) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            verify::run_verify(&run, o.seed, o.tol, o.out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &GcalcError) -> u8 {
    match e {
        GcalcError::Cfl { .. } => 3,
        GcalcError::Divergence { .. } | GcalcError::QuadratureDiverged { .. } => 4,
        GcalcError::Verification(_) => 5,
        _ => 2,
    }
}

fn numerics_for(run: &RunConfig, opts: &CommonOpts) -> NumericsConfig {
    build_numerics(run.numerics.as_ref(), opts.tol, NumericsConfig::default())
}

/// Divide `n_steps` into stored levels: the largest stride that divides the
/// step count while keeping at least the requested number of stored steps.
fn storing_stride(n_steps: usize, n_stored: usize) -> usize {
    let mut stride = (n_steps / n_stored.max(1)).max(1);
    while !n_steps.is_multiple_of(stride) {
        stride -= 1;
    }
    stride
}

fn cmd_gheat(opts: &CommonOpts) -> Result<()> {
    let run = RunConfig::load(opts.config.as_deref())?;
    let g = run.require_generator()?;
    let terminal = run.require_terminal()?;
    let driver = build_driver(run.driver.as_ref())?;
    let num = numerics_for(&run, opts);
    let horizon = run.horizon();
    let grid = match run.grid.as_ref() {
        Some(gc) => build_grid(gc)?,
        None => default_domain(&g, 0.0, horizon, &num)?,
    };
    let n_steps = match run.n_steps {
        Some(n) => n,
        None => steps_for(&g, driver.as_ref(), &grid, horizon, num.cfl_safety),
    };
    let solve_opts = SolveOptions {
        t_start: 0.0,
        t_end: horizon,
        n_steps,
        cfl_safety: num.cfl_safety,
        store_stride: storing_stride(n_steps, run.n_stored.unwrap_or(64)),
    };
    let surface = solve_backward(&g, &terminal, driver.as_ref(), &grid, &solve_opts)?;
    println!("u0={}", fmt17(surface.start_center_value()));
    if let Some(path) = &opts.out {
        let mut f = BufWriter::new(File::create(path)?);
        surface.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_expect(opts: &CommonOpts) -> Result<()> {
    let run = RunConfig::load(opts.config.as_deref())?;
    let g = run.require_generator()?;
    let xi = run.require_functional()?;
    let num = numerics_for(&run, opts);

    if let Some(eval) = &run.eval {
        let v = conditional_g_expectation(&xi, eval.time, &eval.observed, &g, &num)?;
        println!("value={}", fmt17(v));
        return Ok(());
    }
    if run.bounds == Some(true) {
        let (lower, upper) = g_mean_bounds(&xi, &g, &num)?;
        println!("lower={}", fmt17(lower));
        println!("upper={}", fmt17(upper));
    } else {
        let v = g_expectation(&xi, &g, &num)?;
        println!("value={}", fmt17(v));
    }
    if let Some(path) = &opts.out {
        let surface = first_stage_surface(&xi, &g, &num)?;
        let mut f = BufWriter::new(File::create(path)?);
        surface.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_bsde(opts: &CommonOpts) -> Result<()> {
    let run = RunConfig::load(opts.config.as_deref())?;
    let g = run.require_generator()?;
    let terminal = run.require_terminal()?;
    let driver = build_driver(run.driver.as_ref())?;
    let num = numerics_for(&run, opts);
    let horizon = run.horizon();
    let mc = build_mc(run.mc.as_ref(), opts.seed, true)?;
    let scenario_cfg = run
        .scenario
        .as_ref()
        .ok_or_else(|| GcalcError::Config("config is missing the required `scenario` section".into()))?;
    let scenario = build_scenario(scenario_cfg, &g, horizon)?;
    let grid = match run.grid.as_ref() {
        Some(gc) => build_grid(gc)?,
        None => default_domain(&g, 0.0, horizon, &num)?,
    };

    let surfaces = solve_markovian_gbsde(
        &g,
        driver.as_ref(),
        &terminal,
        &grid,
        horizon,
        run.n_stored.unwrap_or(256),
        num.cfl_safety,
    )?;
    println!("y0={}", fmt17(surfaces.y0()));

    let paths = simulate(&scenario, horizon, &mc)?;
    let solutions: Vec<BsdeSolution> = map_indexed(paths.len(), |i| {
        extract_bsde_processes(&surfaces, &paths[i], &g, driver.as_ref())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    println!("paths={}", solutions.len());

    if let Some(path) = &opts.out {
        let mut f = BufWriter::new(File::create(path)?);
        write_bsde_csv(&solutions, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_simulate(opts: &CommonOpts) -> Result<()> {
    let run = RunConfig::load(opts.config.as_deref())?;
    let g = run.require_generator()?;
    let horizon = run.horizon();
    let mc = build_mc(run.mc.as_ref(), opts.seed, true)?;
    let scenario_cfg = run
        .scenario
        .as_ref()
        .ok_or_else(|| GcalcError::Config("config is missing the required `scenario` section".into()))?;
    let scenario = build_scenario(scenario_cfg, &g, horizon)?;
    let paths = simulate(&scenario, horizon, &mc)?;
    println!("paths={} steps={}", paths.len(), paths[0].n_steps());
    if let Some(path) = &opts.out {
        let mut f = BufWriter::new(File::create(path)?);
        write_paths_csv(&paths, &mut f)?;
        f.flush()?;
    }
    Ok(())
}
