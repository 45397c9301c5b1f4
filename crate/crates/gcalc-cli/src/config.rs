//! JSON run-configuration schema and builders into library types.
//!
//! A run is described by one JSON document; terminal functions, drivers,
//! payoffs and scenarios come from named built-in families with scalar
//! parameters, so configs stay portable and carry no code. Unknown fields
//! are rejected, making typos configuration errors rather than silent
//! defaults.

use std::fs;
use std::path::Path;

use gcalc::error::{GcalcError, Result};
use gcalc::functional::{CylinderFunctional, TerminalFunction};
use gcalc::generator::{EtaSource, SublinearGenerator};
use gcalc::gheat::MarkovDriver;
use gcalc::grid::{NumericsConfig, SpaceGrid};
use gcalc::harness::GridSweep;
use gcalc::scenarios::{bang_bang_family, McConfig, Scenario};
use serde::Deserialize;

/// Top-level run document; every section is optional and commands require
/// only the sections they consume.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: Option<GeneratorCfg>,
    pub terminal: Option<TerminalCfg>,
    pub driver: Option<DriverCfg>,
    pub functional: Option<FunctionalCfg>,
    pub scenario: Option<ScenarioCfg>,
    pub grid: Option<GridCfg>,
    pub numerics: Option<NumericsCfg>,
    pub mc: Option<McCfg>,
    pub sweep: Option<SweepCfg>,
    pub horizon: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_stored: Option<usize>,
    pub eval: Option<EvalCfg>,
    pub bounds: Option<bool>,
}

impl RunConfig {
    /// Load a config document, or the empty default when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| {
            GcalcError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| GcalcError::Config(format!("config parse error: {e}")))
    }

    pub fn require_generator(&self) -> Result<SublinearGenerator> {
        build_generator(self.generator.as_ref().ok_or_else(|| missing("generator"))?)
    }

    pub fn require_terminal(&self) -> Result<TerminalFunction> {
        build_terminal(self.terminal.as_ref().ok_or_else(|| missing("terminal"))?)
    }

    pub fn require_functional(&self) -> Result<CylinderFunctional> {
        build_functional(self.functional.as_ref().ok_or_else(|| missing("functional"))?)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.0)
    }
}

fn missing(section: &str) -> GcalcError {
    GcalcError::Config(format!("config is missing the required `{section}` section"))
}

/// Generator families.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorCfg {
    Standard { sigma_low_sq: f64, sigma_high_sq: f64 },
    Linear,
    EpsShrunk { sigma_low_sq: f64, sigma_high_sq: f64, eps: f64 },
    EtaSymmetrized { sigma_low_sq: f64, sigma_high_sq: f64, eta: f64 },
}

pub fn build_generator(cfg: &GeneratorCfg) -> Result<SublinearGenerator> {
    match *cfg {
        GeneratorCfg::Standard {
            sigma_low_sq,
            sigma_high_sq,
        } => SublinearGenerator::standard(sigma_low_sq, sigma_high_sq),
        GeneratorCfg::Linear => Ok(SublinearGenerator::linear()),
        GeneratorCfg::EpsShrunk {
            sigma_low_sq,
            sigma_high_sq,
            eps,
        } => SublinearGenerator::eps_shrunk(sigma_low_sq, sigma_high_sq, eps),
        GeneratorCfg::EtaSymmetrized {
            sigma_low_sq,
            sigma_high_sq,
            eta,
        } => SublinearGenerator::eta_symmetrized(sigma_low_sq, sigma_high_sq, EtaSource::Constant(eta)),
    }
}

/// Terminal-function families.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCfg {
    Polynomial { coeffs: Vec<f64> },
    Cos,
    Sin,
    Constant { value: f64 },
    Call { strike: f64 },
    Put { strike: f64 },
    Butterfly { center: f64, half_width: f64 },
}

pub fn build_terminal(cfg: &TerminalCfg) -> Result<TerminalFunction> {
    Ok(match cfg {
        TerminalCfg::Polynomial { coeffs } => TerminalFunction::polynomial(coeffs),
        TerminalCfg::Cos => TerminalFunction::cosine(),
        TerminalCfg::Sin => TerminalFunction::sine(),
        TerminalCfg::Constant { value } => TerminalFunction::constant(*value),
        TerminalCfg::Call { strike } => TerminalFunction::call(*strike),
        TerminalCfg::Put { strike } => TerminalFunction::put(*strike),
        TerminalCfg::Butterfly { center, half_width } => {
            TerminalFunction::butterfly(*center, *half_width)
        }
    })
}

/// Driver families for the semilinear solve.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverCfg {
    /// `f = -rate * y`.
    Discount { rate: f64 },
    /// `f = mu * z`.
    Drift { mu: f64 },
    /// `f = coeff * w` (curvature coupling; no weak compensator column).
    Curvature { coeff: f64 },
}

pub fn build_driver(cfg: Option<&DriverCfg>) -> Result<Option<MarkovDriver>> {
    let Some(cfg) = cfg else { return Ok(None) };
    let d = match *cfg {
        DriverCfg::Discount { rate } => {
            MarkovDriver::new(move |_t, _x, y, _z, _w| -rate * y, rate.abs(), 0.0, 0.0)?
        }
        DriverCfg::Drift { mu } => {
            MarkovDriver::new(move |_t, _x, _y, z, _w| mu * z, 0.0, mu.abs(), 0.0)?
        }
        DriverCfg::Curvature { coeff } => {
            MarkovDriver::new(move |_t, _x, _y, _z, w| coeff * w, 0.0, 0.0, coeff.abs())?
        }
    };
    Ok(Some(d))
}

/// One monomial `coeff * prod_i x_i^powers[i]` over the functional's
/// coordinates.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialTerm {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Payoff families over the observation coordinates.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffCfg {
    /// Multivariate polynomial as a sum of monomials.
    Monomials { terms: Vec<MonomialTerm> },
    /// A terminal-function family applied to the last coordinate.
    LastCoordinate { terminal: Box<TerminalCfg> },
}

/// Cylinder functional: observation times plus a payoff family.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalCfg {
    pub times: Vec<f64>,
    pub payoff: PayoffCfg,
}

pub fn build_functional(cfg: &FunctionalCfg) -> Result<CylinderFunctional> {
    match &cfg.payoff {
        PayoffCfg::Monomials { terms } => {
            let arity = cfg.times.len();
            for t in terms {
                if t.powers.len() != arity {
                    return Err(GcalcError::Config(format!(
                        "monomial has {} powers for {arity} observation times",
                        t.powers.len()
                    )));
                }
            }
            let degree = terms
                .iter()
                .map(|t| t.powers.iter().sum::<u32>())
                .max()
                .unwrap_or(0);
            let coeff_sum = terms.iter().map(|t| t.coeff.abs()).sum::<f64>().max(1.0);
            let terms = terms.clone();
            CylinderFunctional::new(
                cfg.times.clone(),
                move |xs: &[f64]| {
                    terms
                        .iter()
                        .map(|t| {
                            t.coeff
                                * t.powers
                                    .iter()
                                    .zip(xs)
                                    .map(|(&p, &x)| x.powi(p as i32))
                                    .product::<f64>()
                        })
                        .sum()
                },
                degree,
                coeff_sum,
            )
        }
        PayoffCfg::LastCoordinate { terminal } => {
            let tf = build_terminal(terminal)?;
            let (deg, coeff) = (tf.growth_degree(), tf.growth_coeff());
            CylinderFunctional::new(
                cfg.times.clone(),
                move |xs: &[f64]| tf.eval(*xs.last().expect("arity checked at construction")),
                deg,
                coeff,
            )
        }
    }
}

/// Scenario (volatility control) families.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioCfg {
    Constant {
        sigma_sq: f64,
    },
    Piecewise {
        switch_times: Vec<f64>,
        levels: Vec<f64>,
    },
    /// Alternating-sign control on `n` equal subintervals.
    BangBang {
        n: usize,
        #[serde(default)]
        anti: bool,
    },
}

pub fn build_scenario(
    cfg: &ScenarioCfg,
    g: &SublinearGenerator,
    horizon: f64,
) -> Result<Scenario> {
    match cfg {
        ScenarioCfg::Constant { sigma_sq } => Scenario::constant(g, *sigma_sq),
        ScenarioCfg::Piecewise {
            switch_times,
            levels,
        } => Scenario::piecewise(g, switch_times.clone(), levels.clone()),
        ScenarioCfg::BangBang { n, anti } => {
            let family = bang_bang_family(g, *n, horizon)?;
            let idx = usize::from(*anti).min(family.len() - 1);
            Ok(family.into_iter().nth(idx).expect("family is non-empty"))
        }
    }
}

/// Explicit space grid; omitted grids default to a diffusion-scaled domain.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

pub fn build_grid(cfg: &GridCfg) -> Result<SpaceGrid> {
    SpaceGrid::new(cfg.x_min, cfg.x_max, cfg.n_nodes)
}

/// Partial numerics overrides applied over library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsCfg {
    pub dx: Option<f64>,
    pub domain_multiplier: Option<f64>,
    pub cfl_safety: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_cylinder_arity: Option<usize>,
    pub param_stride: Option<usize>,
}

pub fn build_numerics(
    cfg: Option<&NumericsCfg>,
    tol_flag: Option<f64>,
    base: NumericsConfig,
) -> NumericsConfig {
    let mut out = base;
    if let Some(c) = cfg {
        if let Some(v) = c.dx {
            out.dx = v;
        }
        if let Some(v) = c.domain_multiplier {
            out.domain_multiplier = v;
        }
        if let Some(v) = c.cfl_safety {
            out.cfl_safety = v;
        }
        if let Some(v) = c.tolerance {
            out.tolerance = v;
        }
        if let Some(v) = c.max_cylinder_arity {
            out.max_cylinder_arity = v;
        }
        if let Some(v) = c.param_stride {
            out.param_stride = v;
        }
    }
    if let Some(t) = tol_flag {
        out.tolerance = t;
    }
    out
}

/// Partial Monte-Carlo overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McCfg {
    pub n_paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub confidence: Option<f64>,
}

/// Resolve the Monte-Carlo config. Seed precedence: `--seed` flag, then the
/// config's `mc.seed`, then (only when `require_seed` is off) the library
/// default.
pub fn build_mc(cfg: Option<&McCfg>, seed_flag: Option<u64>, require_seed: bool) -> Result<McConfig> {
    let base = McConfig::default();
    let seed = match seed_flag.or(cfg.and_then(|c| c.seed)) {
        Some(s) => s,
        None if require_seed => {
            return Err(GcalcError::Config(
                "stochastic command needs a seed: pass --seed or set mc.seed".into(),
            ))
        }
        None => base.seed,
    };
    Ok(McConfig {
        n_paths: cfg.and_then(|c| c.n_paths).unwrap_or(base.n_paths),
        dt: cfg.and_then(|c| c.dt).unwrap_or(base.dt),
        seed,
        confidence: cfg.and_then(|c| c.confidence).unwrap_or(base.confidence),
    })
}

/// Partial verification-sweep overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub bands: Option<Vec<(f64, f64)>>,
    pub etas: Option<Vec<f64>>,
    pub n_levels: Option<Vec<usize>>,
    pub n_max: Option<usize>,
    pub horizon: Option<f64>,
}

pub fn build_sweep(cfg: Option<&SweepCfg>) -> GridSweep {
    let base = GridSweep::default();
    let Some(c) = cfg else { return base };
    GridSweep {
        bands: c.bands.clone().unwrap_or(base.bands),
        etas: c.etas.clone().unwrap_or(base.etas),
        n_levels: c.n_levels.clone().unwrap_or(base.n_levels),
        n_max: c.n_max.unwrap_or(base.n_max),
        horizon: c.horizon.unwrap_or(base.horizon),
    }
}

/// Conditional-evaluation request for expectation queries.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    pub time: f64,
    #[serde(default)]
    pub observed: Vec<f64>,
}
