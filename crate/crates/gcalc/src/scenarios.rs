//! Volatility scenarios (controls), simulation of the path pair `(B, <B>)`,
//! Monte-Carlo lower bounds for the sublinear expectation, the alternating
//! sign process, and pathwise norm estimators.
//!
//! A scenario is one admissible volatility path with every produced variance
//! rate inside the band `[sigma_low_sq, sigma_high_sq]`. The sublinear
//! expectation dominates the mean under every scenario, so the maximum of
//! Monte-Carlo means over a scenario family is always a lower-bound estimate;
//! PDE solves provide the reference value. All comparisons built on these
//! estimators are one-sided with that direction.
//!
//! Randomness is counter-based: the normal increment for `(seed, path, step)`
//! is a pure function of those three integers, so batches are bit-for-bit
//! reproducible regardless of scheduling or worker count.

use std::io::Write;
use std::sync::Arc;

use crate::error::{GcalcError, Result};
use crate::functional::StepProcess;
use crate::generator::SublinearGenerator;
use crate::parallel::{map_indexed, mean_and_stderr, pairwise_sum};
use crate::pathcalc::CylinderPathProcess;
use crate::rng::cell_normal;

/// How a scenario chooses the variance rate at each step.
#[derive(Clone)]
pub enum ScenarioKind {
    /// One rate for the whole horizon.
    Constant(f64),
    /// `levels[j]` applies on `[switch_times[j-1], switch_times[j])`, with the
    /// first level active from time zero and the last until the horizon.
    PiecewiseConstant {
        switch_times: Vec<f64>,
        levels: Vec<f64>,
    },
    /// Rate chosen from the clock and the current state, clamped to the band.
    Feedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

/// An admissible volatility control: produces a variance rate in
/// `[sigma_low_sq, sigma_high_sq]` for every `(t, b)`.
#[derive(Clone)]
pub struct Scenario {
    kind: ScenarioKind,
    sigma_low_sq: f64,
    sigma_high_sq: f64,
    label: Arc<str>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("label", &self.label)
            .field("band", &(self.sigma_low_sq, self.sigma_high_sq))
            .finish_non_exhaustive()
    }
}

fn band_of(g: &SublinearGenerator) -> (f64, f64) {
    g.sigma_band()
}

impl Scenario {
    /// Constant variance rate; must lie inside the generator's band.
    pub fn constant(g: &SublinearGenerator, sigma_sq: f64) -> Result<Self> {
        let (lo, hi) = band_of(g);
        if !(sigma_sq >= lo && sigma_sq <= hi) {
            return Err(GcalcError::Config(format!(
                "constant rate {sigma_sq} outside the band [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            kind: ScenarioKind::Constant(sigma_sq),
            sigma_low_sq: lo,
            sigma_high_sq: hi,
            label: format!("const:{sigma_sq}").into(),
        })
    }

    /// Deterministic piecewise-constant rate with switches at the given
    /// strictly increasing positive times.
    pub fn piecewise(g: &SublinearGenerator, switch_times: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let (lo, hi) = band_of(g);
        if levels.len() != switch_times.len() + 1 {
            return Err(GcalcError::Config(format!(
                "piecewise control needs {} levels for {} switches, got {}",
                switch_times.len() + 1,
                switch_times.len(),
                levels.len()
            )));
        }
        if switch_times.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || switch_times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(GcalcError::Config(
                "switch times must be finite, positive and strictly increasing".into(),
            ));
        }
        for &v in &levels {
            if !(v >= lo && v <= hi) {
                return Err(GcalcError::Config(format!(
                    "piecewise level {v} outside the band [{lo}, {hi}]"
                )));
            }
        }
        let label = format!(
            "piecewise:{}",
            levels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|")
        );
        Ok(Self {
            kind: ScenarioKind::PiecewiseConstant { switch_times, levels },
            sigma_low_sq: lo,
            sigma_high_sq: hi,
            label: label.into(),
        })
    }

    /// State-feedback rate `f(t, b)`, clamped into the band at every call.
    pub fn feedback(
        g: &SublinearGenerator,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        label: &str,
    ) -> Self {
        let (lo, hi) = band_of(g);
        Self {
            kind: ScenarioKind::Feedback(Arc::new(f)),
            sigma_low_sq: lo,
            sigma_high_sq: hi,
            label: label.into(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn band(&self) -> (f64, f64) {
        (self.sigma_low_sq, self.sigma_high_sq)
    }

    /// Variance rate for the step observed at clock `t` and state `b`.
    /// Guaranteed to lie in the band.
    pub fn sigma_sq(&self, t: f64, b: f64) -> f64 {
        match &self.kind {
            ScenarioKind::Constant(v) => *v,
            ScenarioKind::PiecewiseConstant { switch_times, levels } => {
                let j = switch_times.partition_point(|&s| s <= t);
                levels[j]
            }
            ScenarioKind::Feedback(f) => f(t, b).clamp(self.sigma_low_sq, self.sigma_high_sq),
        }
    }
}

/// The evenly spaced ladder of constant controls spanning the band
/// (endpoints included). A degenerate band collapses to one scenario.
pub fn constant_ladder(g: &SublinearGenerator, n: usize) -> Result<Vec<Scenario>> {
    let (lo, hi) = band_of(g);
    if n == 0 {
        return Err(GcalcError::Config("ladder needs at least one rung".into()));
    }
    if hi == lo || n == 1 {
        return Ok(vec![Scenario::constant(g, lo)?]);
    }
    (0..n)
        .map(|i| Scenario::constant(g, lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Both orientations of one-switch controls (low-then-high and high-then-low)
/// for each provided switch time.
pub fn single_switch_family(g: &SublinearGenerator, switch_times: &[f64]) -> Result<Vec<Scenario>> {
    let (lo, hi) = band_of(g);
    if hi == lo {
        return Ok(vec![Scenario::constant(g, lo)?]);
    }
    let mut out = Vec::with_capacity(2 * switch_times.len());
    for &s in switch_times {
        out.push(Scenario::piecewise(g, vec![s], vec![lo, hi])?);
        out.push(Scenario::piecewise(g, vec![s], vec![hi, lo])?);
    }
    Ok(out)
}

/// Sign-feedback controls: the high rate where `hint(t, b) >= 0` and the low
/// rate elsewhere, plus the flipped orientation.
pub fn sign_feedback_family(
    g: &SublinearGenerator,
    hint: impl Fn(f64, f64) -> f64 + Send + Sync + Clone + 'static,
) -> Vec<Scenario> {
    let (lo, hi) = band_of(g);
    let aligned = {
        let hint = hint.clone();
        Scenario::feedback(
            g,
            move |t, b| if hint(t, b) >= 0.0 { hi } else { lo },
            "feedback:sign+",
        )
    };
    let flipped = Scenario::feedback(
        g,
        move |t, b| if hint(t, b) >= 0.0 { lo } else { hi },
        "feedback:sign-",
    );
    vec![aligned, flipped]
}

/// Bang-bang controls aligned with [`delta_n`] on `n` equal subintervals:
/// high rate where the sign process is `+1`, low where it is `-1`, plus the
/// anti-aligned orientation.
pub fn bang_bang_family(g: &SublinearGenerator, n: usize, horizon: f64) -> Result<Vec<Scenario>> {
    let (lo, hi) = band_of(g);
    if n == 0 {
        return Err(GcalcError::Config("bang-bang control needs n >= 1".into()));
    }
    if hi == lo {
        return Ok(vec![Scenario::constant(g, lo)?]);
    }
    let switch_times: Vec<f64> = (1..n).map(|i| horizon * i as f64 / n as f64).collect();
    let aligned: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { hi } else { lo }).collect();
    let anti: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { lo } else { hi }).collect();
    Ok(vec![
        Scenario::piecewise(g, switch_times.clone(), aligned)?,
        Scenario::piecewise(g, switch_times, anti)?,
    ])
}

/// Default estimation family: the 9-rung constant ladder, single-switch
/// controls at the quarter points of the horizon, and sign feedback on the
/// state.
pub fn default_family(g: &SublinearGenerator, horizon: f64) -> Result<Vec<Scenario>> {
    let mut family = constant_ladder(g, 9)?;
    family.extend(single_switch_family(
        g,
        &[0.25 * horizon, 0.5 * horizon, 0.75 * horizon],
    )?);
    family.extend(sign_feedback_family(g, |_t, b| b));
    Ok(family)
}

/// Simulation controls shared by all Monte-Carlo estimators.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_paths: usize,
    /// Uniform time step; must divide the horizon of every run.
    pub dt: f64,
    pub seed: u64,
    /// Width multiplier for one-sided confidence statements (default 3).
    pub confidence: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 1.0 / 256.0,
            seed: 42,
            confidence: 3.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(GcalcError::Config("n_paths must be positive".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(GcalcError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.confidence.is_finite() && self.confidence >= 0.0) {
            return Err(GcalcError::Config("confidence multiplier must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of steps covering `horizon`; errors unless `dt` divides it.
    pub fn n_steps(&self, horizon: f64) -> Result<usize> {
        self.validate()?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GcalcError::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let steps = (horizon / self.dt).round();
        if steps < 1.0 || (steps * self.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(GcalcError::Config(format!(
                "dt = {} does not divide the horizon {horizon}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// One simulated path of the pair `(B, <B>)` on a uniform grid.
#[derive(Debug, Clone)]
pub struct SamplePath {
    /// Shared uniform grid `0 = t_0 < ... < t_n`.
    pub times: Arc<Vec<f64>>,
    /// State path, `b[0] = 0`.
    pub b: Vec<f64>,
    /// Quadratic variation, `qv[0] = 0`, built from the control exactly:
    /// each increment is `sigma_sq(step) * dt`.
    pub qv: Vec<f64>,
    pub scenario_label: Arc<str>,
    pub seed: u64,
    pub path_id: u64,
}

impl SamplePath {
    pub fn n_steps(&self) -> usize {
        self.b.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Grid index of time `t`; errors when `t` is off the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let i = (t / self.dt()).round();
        if i < 0.0 || i > self.n_steps() as f64 {
            return Err(GcalcError::Domain(format!("time {t} outside the path grid")));
        }
        let i = i as usize;
        if (self.times[i] - t).abs() > 1e-9 * self.horizon().max(1.0) {
            return Err(GcalcError::Precondition(format!(
                "time {t} does not sit on the simulation grid (nearest {})",
                self.times[i]
            )));
        }
        Ok(i)
    }

    /// State value at a grid-aligned time.
    pub fn value_at_time(&self, t: f64) -> Result<f64> {
        Ok(self.b[self.index_of(t)?])
    }
}

fn uniform_times(horizon: f64, n: usize) -> Arc<Vec<f64>> {
    let dt = horizon / n as f64;
    Arc::new((0..=n).map(|i| i as f64 * dt).collect())
}

fn generate_path(
    scenario: &Scenario,
    times: &Arc<Vec<f64>>,
    cfg: &McConfig,
    path_id: u64,
) -> SamplePath {
    let n = times.len() - 1;
    let dt = times[1] - times[0];
    let sqrt_dt = dt.sqrt();
    let mut b = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    b.push(0.0);
    qv.push(0.0);
    for k in 0..n {
        // The control observes the clock at the step midpoint (so grid-aligned
        // switches are unambiguous) and the state at the left endpoint (so the
        // control never peeks at the increment it multiplies).
        let t_mid = 0.5 * (times[k] + times[k + 1]);
        let s2 = scenario.sigma_sq(t_mid, b[k]);
        let xi = cell_normal(cfg.seed, path_id, k as u64);
        b.push(b[k] + s2.sqrt() * sqrt_dt * xi);
        qv.push(qv[k] + s2 * dt);
    }
    SamplePath {
        times: Arc::clone(times),
        b,
        qv,
        scenario_label: Arc::clone(&scenario.label),
        seed: cfg.seed,
        path_id,
    }
}

/// Simulate a batch of paths under one scenario. Bit-for-bit reproducible
/// for a fixed seed, independent of worker count.
pub fn simulate(scenario: &Scenario, horizon: f64, cfg: &McConfig) -> Result<Vec<SamplePath>> {
    let n = cfg.n_steps(horizon)?;
    let times = uniform_times(horizon, n);
    Ok(map_indexed(cfg.n_paths, |p| {
        generate_path(scenario, &times, cfg, p as u64)
    }))
}

/// A Monte-Carlo estimate with its provenance.
#[derive(Debug, Clone)]
pub struct McEstimate {
    /// Identifier written to CSV; defaults to the maximizing scenario label.
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

/// Lower-bound estimate of the sublinear expectation of `payoff`: the
/// maximum over the scenario family of the Monte-Carlo mean. The contract is
/// one-sided: estimate <= true value + confidence * stderr. Enlarging the
/// family never decreases the estimate.
pub fn estimate_expectation_lower<F>(
    payoff: &F,
    family: &[Scenario],
    horizon: f64,
    cfg: &McConfig,
) -> Result<McEstimate>
where
    F: Fn(&SamplePath) -> f64 + Sync,
{
    if family.is_empty() {
        return Err(GcalcError::Precondition(
            "scenario family must not be empty".into(),
        ));
    }
    let n = cfg.n_steps(horizon)?;
    let times = uniform_times(horizon, n);
    let mut best: Option<(f64, f64, &Scenario)> = None;
    for sc in family {
        let vals = map_indexed(cfg.n_paths, |p| {
            payoff(&generate_path(sc, &times, cfg, p as u64))
        });
        let (mean, se) = mean_and_stderr(&vals);
        if best.is_none() || mean > best.unwrap().0 {
            best = Some((mean, se, sc));
        }
    }
    let (value, stderr, sc) = best.unwrap();
    Ok(McEstimate {
        name: sc.label().to_string(),
        value,
        stderr,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// The alternating sign process on `n` equal subintervals of `[0, horizon]`:
/// `(-1)^i` on the left-open interval `(i*horizon/n, (i+1)*horizon/n]`.
/// Zero is excluded (the intervals are left-open).
pub fn delta_n(s: f64, n: usize, horizon: f64) -> Result<f64> {
    if n == 0 {
        return Err(GcalcError::Config("sign process needs n >= 1".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(GcalcError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(s > 0.0 && s <= horizon * (1.0 + 1e-12)) {
        return Err(GcalcError::Domain(format!(
            "sign process defined on (0, {horizon}], got {s}"
        )));
    }
    let i = ((s * n as f64 / horizon).ceil() as i64 - 1).clamp(0, n as i64 - 1);
    Ok(if i % 2 == 0 { 1.0 } else { -1.0 })
}

/// A norm estimate: `norm = raw^(1/p)` where `raw` is the max-over-family
/// Monte-Carlo mean of the p-th power aggregate, and `stderr` is the standard
/// error of `raw` at the maximizing scenario. Always a lower-bound estimator
/// of the true sublinear norm.
#[derive(Debug, Clone)]
pub struct NormEstimate {
    pub name: String,
    pub norm: f64,
    pub raw: f64,
    pub stderr: f64,
    pub p: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// The family all norm estimators maximize over: the 9-rung constant ladder.
fn norm_family(g: &SublinearGenerator) -> Result<Vec<Scenario>> {
    constant_ladder(g, 9)
}

fn max_aggregate_over_family<A>(
    aggregate: &A,
    family: &[Scenario],
    horizon: f64,
    cfg: &McConfig,
) -> Result<(f64, f64, String)>
where
    A: Fn(&SamplePath) -> f64 + Sync,
{
    let est = estimate_expectation_lower(aggregate, family, horizon, cfg)?;
    Ok((est.value, est.stderr, est.name))
}

fn check_p(p: f64, min: f64) -> Result<()> {
    if !(p.is_finite() && p >= min) {
        return Err(GcalcError::Config(format!(
            "norm exponent must satisfy p >= {min}, got {p}"
        )));
    }
    Ok(())
}

/// Time-integral norm: `raw = E[int_0^T |eta_s|^p ds]`, estimated with the
/// left-endpoint value of each step. `p = 1` is allowed here.
pub fn norm_m<F>(
    eta: &F,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate>
where
    F: Fn(&SamplePath, usize) -> f64 + Sync,
{
    check_p(p, 1.0)?;
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let agg = |path: &SamplePath| {
        let terms: Vec<f64> = (0..n).map(|k| eta(path, k).abs().powf(p) * dt).collect();
        pairwise_sum(&terms)
    };
    let (raw, stderr, label) = max_aggregate_over_family(&agg, &norm_family(g)?, horizon, cfg)?;
    Ok(NormEstimate {
        name: format!("M[{label}]"),
        norm: raw.powf(1.0 / p),
        raw,
        stderr,
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// Square-function norm: `raw = E[(int_0^T |eta_s|^2 ds)^(p/2)]`.
pub fn norm_h<F>(
    eta: &F,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate>
where
    F: Fn(&SamplePath, usize) -> f64 + Sync,
{
    check_p(p, 1.0 + f64::EPSILON)?;
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let agg = |path: &SamplePath| {
        let terms: Vec<f64> = (0..n)
            .map(|k| {
                let v = eta(path, k);
                v * v * dt
            })
            .collect();
        pairwise_sum(&terms).powf(p / 2.0)
    };
    let (raw, stderr, label) = max_aggregate_over_family(&agg, &norm_family(g)?, horizon, cfg)?;
    Ok(NormEstimate {
        name: format!("H[{label}]"),
        norm: raw.powf(1.0 / p),
        raw,
        stderr,
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// Supremum norm: `raw = E[sup_{0<=s<=T} |u_s|^p]`, sampled at every grid
/// index including the terminal one.
pub fn norm_s<F>(
    u: &F,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate>
where
    F: Fn(&SamplePath, usize) -> f64 + Sync,
{
    check_p(p, 1.0 + f64::EPSILON)?;
    let n = cfg.n_steps(horizon)?;
    let agg = |path: &SamplePath| {
        (0..=n)
            .map(|k| u(path, k).abs().powf(p))
            .fold(0.0f64, f64::max)
    };
    let (raw, stderr, label) = max_aggregate_over_family(&agg, &norm_family(g)?, horizon, cfg)?;
    Ok(NormEstimate {
        name: format!("S[{label}]"),
        norm: raw.powf(1.0 / p),
        raw,
        stderr,
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// Time-integrated second-moment norm: `raw = int_0^T E[|eta_s|^2] ds` with
/// the expectation maximized over the family separately at each time step.
///
/// The printed definition carries exponent 2 regardless of the superscript,
/// so only `p = 2` semantics are exposed; other exponents are rejected. The
/// reported stderr sums the per-step standard errors (conservative, since
/// steps share paths).
pub fn norm_m_tilde<F>(
    eta: &F,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate>
where
    F: Fn(&SamplePath, usize) -> f64 + Sync,
{
    if p != 2.0 {
        return Err(GcalcError::UnsupportedMode(
            "the time-integrated second-moment norm is defined with p = 2 only".into(),
        ));
    }
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let times = uniform_times(horizon, n);
    let family = norm_family(g)?;

    // Per-step column statistics, blocked so memory stays bounded and the
    // combination order is fixed (block index order) for determinism.
    const BLOCK: usize = 128;
    let n_blocks = cfg.n_paths.div_ceil(BLOCK);
    let mut best_mean: Vec<f64> = vec![f64::NEG_INFINITY; n];
    let mut best_se: Vec<f64> = vec![0.0; n];
    for sc in &family {
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = map_indexed(n_blocks, |bi| {
            let mut sums = vec![0.0; n];
            let mut sqs = vec![0.0; n];
            let lo = bi * BLOCK;
            let hi = (lo + BLOCK).min(cfg.n_paths);
            for pid in lo..hi {
                let path = generate_path(sc, &times, cfg, pid as u64);
                for (k, (s, q)) in sums.iter_mut().zip(sqs.iter_mut()).enumerate() {
                    let v = eta(&path, k);
                    let v2 = v * v;
                    *s += v2;
                    *q += v2 * v2;
                }
            }
            (sums, sqs)
        });
        let mut sums = vec![0.0; n];
        let mut sqs = vec![0.0; n];
        for (bs, bq) in &blocks {
            for k in 0..n {
                sums[k] += bs[k];
                sqs[k] += bq[k];
            }
        }
        let np = cfg.n_paths as f64;
        for k in 0..n {
            let mean = sums[k] / np;
            let var = ((sqs[k] - np * mean * mean) / (np - 1.0).max(1.0)).max(0.0);
            let se = (var / np).sqrt();
            if mean > best_mean[k] {
                best_mean[k] = mean;
                best_se[k] = se;
            }
        }
    }
    let raw_terms: Vec<f64> = best_mean.iter().map(|m| m * dt).collect();
    let se_terms: Vec<f64> = best_se.iter().map(|s| s * dt).collect();
    let raw = pairwise_sum(&raw_terms);
    Ok(NormEstimate {
        name: "M~".into(),
        norm: raw.max(0.0).sqrt(),
        raw,
        stderr: pairwise_sum(&se_terms),
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// First-order/second-order Sobolev aggregate of a smooth path process:
/// `raw = E[ sup|u|^p + int (|D_t u|^p + |D_xx u|^p) ds + (int |D_x u|^2 ds)^(p/2) ]`
/// (one expectation of the summed functional).
pub fn norm_w12p(
    u: &CylinderPathProcess,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate> {
    check_p(p, 1.0 + f64::EPSILON)?;
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let family = norm_family(g)?;
    validate_trace(u, &family[0], horizon, cfg)?;
    let agg = |path: &SamplePath| {
        let trace = u.along_path(path).expect("trace validated before the batch");
        let mut sup = 0.0f64;
        let mut dx2_terms = Vec::with_capacity(n);
        let mut mixed_terms = Vec::with_capacity(n);
        for k in 0..=n {
            sup = sup.max(trace.value(k).abs().powf(p));
            if k < n {
                let dx = trace.d_x(k);
                dx2_terms.push(dx * dx * dt);
                mixed_terms
                    .push((trace.d_t(k).abs().powf(p) + trace.d_xx(k).abs().powf(p)) * dt);
            }
        }
        sup + pairwise_sum(&mixed_terms) + pairwise_sum(&dx2_terms).powf(p / 2.0)
    };
    let (raw, stderr, label) = max_aggregate_over_family(&agg, &family, horizon, cfg)?;
    Ok(NormEstimate {
        name: format!("W12[{label}]"),
        norm: raw.powf(1.0 / p),
        raw,
        stderr,
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// Weak (half-order) aggregate built from the parabolic operator:
/// `raw = E[ sup|u|^p + (int |D_x u|^2 ds)^(p/2) + int |D_t u + G(D_xx u)|^p ds ]`.
pub fn norm_w_half(
    u: &CylinderPathProcess,
    p: f64,
    g: &SublinearGenerator,
    horizon: f64,
    cfg: &McConfig,
) -> Result<NormEstimate> {
    check_p(p, 1.0 + f64::EPSILON)?;
    let rg = g.resolved(None)?;
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let family = norm_family(g)?;
    validate_trace(u, &family[0], horizon, cfg)?;
    let agg = |path: &SamplePath| {
        let trace = u.along_path(path).expect("trace validated before the batch");
        let mut sup = 0.0f64;
        let mut dx2_terms = Vec::with_capacity(n);
        let mut op_terms = Vec::with_capacity(n);
        for k in 0..=n {
            sup = sup.max(trace.value(k).abs().powf(p));
            if k < n {
                let dx = trace.d_x(k);
                dx2_terms.push(dx * dx * dt);
                let a_g = trace.d_t(k) + rg.eval(trace.d_xx(k));
                op_terms.push(a_g.abs().powf(p) * dt);
            }
        }
        sup + pairwise_sum(&dx2_terms).powf(p / 2.0) + pairwise_sum(&op_terms)
    };
    let (raw, stderr, label) = max_aggregate_over_family(&agg, &family, horizon, cfg)?;
    Ok(NormEstimate {
        name: format!("Whalf[{label}]"),
        norm: raw.powf(1.0 / p),
        raw,
        stderr,
        p,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

/// Probe one path so alignment errors surface before a parallel batch whose
/// closures cannot propagate `Result`.
fn validate_trace(
    u: &CylinderPathProcess,
    scenario: &Scenario,
    horizon: f64,
    cfg: &McConfig,
) -> Result<()> {
    let n = cfg.n_steps(horizon)?;
    let times = uniform_times(horizon, n);
    let probe = generate_path(scenario, &times, cfg, 0);
    u.along_path(&probe).map(|_| ())
}

/// Adapt a step process to the `(path, index)` integrand interface used by
/// the norm estimators. Validates up front that every partition knot sits on
/// the simulation grid and that the horizons agree, so the returned closure
/// cannot fail.
pub fn step_integrand<'a>(
    sp: &'a StepProcess,
    horizon: f64,
    cfg: &McConfig,
) -> Result<impl Fn(&SamplePath, usize) -> f64 + Sync + 'a> {
    let n = cfg.n_steps(horizon)?;
    let dt = horizon / n as f64;
    let knots = sp.partition().knots();
    if (sp.partition().final_time() - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(GcalcError::Precondition(format!(
            "step process horizon {} does not match the simulation horizon {horizon}",
            sp.partition().final_time()
        )));
    }
    for &tk in knots {
        let i = (tk / dt).round();
        if (i * dt - tk).abs() > 1e-9 * horizon.max(1.0) {
            return Err(GcalcError::Precondition(format!(
                "partition knot {tk} does not sit on the simulation grid (dt = {dt})"
            )));
        }
    }
    Ok(move |path: &SamplePath, i: usize| {
        let t = path.times[i];
        let observed: Vec<f64> = sp.partition().knots()[1..]
            .iter()
            .map(|&tk| path.b[(tk / path.dt()).round() as usize])
            .collect();
        sp.eval_right(t, &observed)
            .expect("partition alignment validated at adapter construction")
    })
}

/// Write paths as `path_id,t,b,qv`, sorted by path then time, every numeric
/// field with 17 significant digits.
pub fn write_paths_csv<W: Write>(paths: &[SamplePath], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "path_id,t,b,qv")?;
    for path in paths {
        for i in 0..path.b.len() {
            writeln!(
                out,
                "{},{},{},{}",
                path.path_id,
                crate::csvfmt::fmt17(path.times[i]),
                crate::csvfmt::fmt17(path.b[i]),
                crate::csvfmt::fmt17(path.qv[i])
            )?;
        }
    }
    Ok(())
}

/// Write estimates as `name,estimate,stderr,n_paths,seed` in input order.
pub fn write_estimates_csv<W: Write>(rows: &[McEstimate], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "name,estimate,stderr,n_paths,seed")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.name,
            crate::csvfmt::fmt17(row.value),
            crate::csvfmt::fmt17(row.stderr),
            row.n_paths,
            row.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SublinearGenerator;

    fn band12() -> SublinearGenerator {
        SublinearGenerator::standard(1.0, 2.0).unwrap()
    }

    fn quick_cfg(n_paths: usize, dt: f64) -> McConfig {
        McConfig {
            n_paths,
            dt,
            seed: 7,
            confidence: 3.0,
        }
    }

    #[test]
    fn test_scenarios_constant_qv_is_exact() {
        let g = band12();
        let sc = Scenario::constant(&g, 2.0).unwrap();
        let paths = simulate(&sc, 1.0, &quick_cfg(3, 1.0 / 256.0)).unwrap();
        for p in &paths {
            assert_eq!(*p.qv.last().unwrap(), 2.0);
            for w in p.qv.windows(2) {
                assert_eq!(w[1] - w[0], 2.0 / 256.0);
            }
        }
    }

    #[test]
    fn test_scenarios_piecewise_qv_levels() {
        let g = band12();
        let sc = Scenario::piecewise(&g, vec![0.5], vec![1.0, 2.0]).unwrap();
        let paths = simulate(&sc, 1.0, &quick_cfg(2, 1.0 / 64.0)).unwrap();
        // qv_T = 1.0 * 0.5 + 2.0 * 0.5 exactly (dyadic arithmetic).
        assert_eq!(*paths[0].qv.last().unwrap(), 1.5);
    }

    #[test]
    fn test_scenarios_band_violations_rejected() {
        let g = band12();
        assert!(Scenario::constant(&g, 2.5).is_err());
        assert!(Scenario::constant(&g, 0.5).is_err());
        assert!(Scenario::piecewise(&g, vec![0.5], vec![1.0, 4.0]).is_err());
        assert!(Scenario::piecewise(&g, vec![0.5, 0.4], vec![1.0, 2.0, 1.0]).is_err());
        assert!(Scenario::piecewise(&g, vec![0.5], vec![1.0]).is_err());
    }

    #[test]
    fn test_scenarios_feedback_is_clamped() {
        let g = band12();
        let sc = Scenario::feedback(&g, |_t, b| 10.0 * b, "wild");
        for &(t, b) in &[(0.1, -5.0), (0.5, 0.0), (0.9, 5.0)] {
            let v = sc.sigma_sq(t, b);
            assert!((1.0..=2.0).contains(&v), "rate {v} escaped the band");
        }
        let paths = simulate(&sc, 1.0, &quick_cfg(4, 1.0 / 64.0)).unwrap();
        for p in &paths {
            for w in p.qv.windows(2) {
                let rate = (w[1] - w[0]) * 64.0;
                assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&rate));
            }
        }
    }

    #[test]
    fn test_scenarios_fixed_seed_reproducible() {
        let g = band12();
        let sc = Scenario::constant(&g, 1.5).unwrap();
        let a = simulate(&sc, 1.0, &quick_cfg(5, 1.0 / 32.0)).unwrap();
        let b = simulate(&sc, 1.0, &quick_cfg(5, 1.0 / 32.0)).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            for (x, y) in pa.b.iter().zip(&pb.b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn test_scenarios_terminal_variance_matches_control() {
        // Sample variance of B_T under a unit-rate control is 1 within four
        // standard errors of the variance estimator.
        let g = band12();
        let sc = Scenario::constant(&g, 1.0).unwrap();
        let cfg = quick_cfg(100_000, 1.0 / 64.0);
        let n = cfg.n_steps(1.0).unwrap();
        let times = uniform_times(1.0, n);
        let finals = map_indexed(cfg.n_paths, |p| {
            *generate_path(&sc, &times, &cfg, p as u64).b.last().unwrap()
        });
        let (mean, _) = mean_and_stderr(&finals);
        let sq: Vec<f64> = finals.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (finals.len() - 1) as f64;
        let tol = 4.0 * (2.0 / (finals.len() as f64 - 1.0)).sqrt();
        assert!((var - 1.0).abs() < tol, "variance {var}, tolerance {tol}");
    }

    #[test]
    fn test_scenarios_dt_must_divide_horizon() {
        let cfg = quick_cfg(1, 0.3);
        assert!(cfg.n_steps(1.0).is_err());
        assert!(quick_cfg(1, 0.25).n_steps(1.0).is_ok());
    }

    #[test]
    fn test_scenarios_estimate_convex_payoff() {
        // E^G[B_1^2] = sigma_high_sq, attained by the top constant control.
        let g = band12();
        let family = constant_ladder(&g, 3).unwrap();
        let cfg = quick_cfg(20_000, 1.0 / 64.0);
        let payoff = |p: &SamplePath| {
            let bt = *p.b.last().unwrap();
            bt * bt
        };
        let est = estimate_expectation_lower(&payoff, &family, 1.0, &cfg).unwrap();
        assert!(
            (est.value - 2.0).abs() <= 3.0 * est.stderr,
            "estimate {} +- {}",
            est.value,
            est.stderr
        );
        assert_eq!(est.name, "const:2");

        let neg = |p: &SamplePath| {
            let bt = *p.b.last().unwrap();
            -bt * bt
        };
        let est = estimate_expectation_lower(&neg, &family, 1.0, &cfg).unwrap();
        assert!((est.value + 1.0).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn test_scenarios_estimate_constant_payoff_exact() {
        let g = band12();
        let family = constant_ladder(&g, 2).unwrap();
        let est =
            estimate_expectation_lower(&|_: &SamplePath| 2.5, &family, 1.0, &quick_cfg(50, 0.25))
                .unwrap();
        assert_eq!(est.value, 2.5);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn test_scenarios_estimate_family_monotone() {
        let g = band12();
        let small = constant_ladder(&g, 2).unwrap();
        let large = constant_ladder(&g, 5).unwrap();
        let cfg = quick_cfg(500, 1.0 / 32.0);
        let payoff = |p: &SamplePath| p.b.iter().fold(0.0f64, |m, v| m.max(*v));
        let lo = estimate_expectation_lower(&payoff, &small, 1.0, &cfg).unwrap();
        let hi = estimate_expectation_lower(&payoff, &large, 1.0, &cfg).unwrap();
        assert!(hi.value >= lo.value);
        assert!(estimate_expectation_lower(&payoff, &[], 1.0, &cfg).is_err());
    }

    #[test]
    fn test_scenarios_delta_n_values() {
        assert_eq!(delta_n(0.1, 4, 1.0).unwrap(), 1.0);
        assert_eq!(delta_n(0.3, 4, 1.0).unwrap(), -1.0);
        assert_eq!(delta_n(0.25, 4, 1.0).unwrap(), 1.0); // left-open: 0.25 in (0, 1/4]
        assert_eq!(delta_n(1.0, 4, 1.0).unwrap(), -1.0);
        assert_eq!(delta_n(0.7, 1, 1.0).unwrap(), 1.0);
        assert!(delta_n(0.0, 4, 1.0).is_err());
        assert!(delta_n(1.5, 4, 1.0).is_err());
    }

    #[test]
    fn test_scenarios_bang_bang_payoff_deterministic() {
        // Under the aligned bang-bang control the signed quadratic-variation
        // payoff is deterministic: (sigma_high_sq - sigma_low_sq) * T / 4.
        let g = band12();
        let n = 4usize;
        let family = bang_bang_family(&g, n, 1.0).unwrap();
        let cfg = quick_cfg(100, 1.0 / 64.0);
        let payoff = move |p: &SamplePath| {
            let terms: Vec<f64> = (0..p.n_steps())
                .map(|k| {
                    let mid = 0.5 * (p.times[k] + p.times[k + 1]);
                    0.5 * delta_n(mid, n, 1.0).unwrap() * (p.qv[k + 1] - p.qv[k])
                })
                .collect();
            pairwise_sum(&terms)
        };
        let est = estimate_expectation_lower(&payoff, &family, 1.0, &cfg).unwrap();
        assert!((est.value - 0.25).abs() < 1e-12, "value {}", est.value);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn test_scenarios_norm_m_and_h_deterministic_integrand() {
        let g = band12();
        let cfg = quick_cfg(16, 1.0 / 256.0);
        let one = |_: &SamplePath, _: usize| 1.0;
        let m = norm_m(&one, 2.0, &g, 1.0, &cfg).unwrap();
        assert_eq!(m.raw, 1.0);
        assert_eq!(m.stderr, 0.0);
        let m1 = norm_m(&one, 1.0, &g, 0.5, &cfg).unwrap();
        assert_eq!(m1.raw, 0.5);
        let h = norm_h(&one, 2.0, &g, 1.0, &cfg).unwrap();
        assert_eq!(h.raw, 1.0);
        let h3 = norm_h(&one, 3.0, &g, 0.25, &cfg).unwrap();
        assert!((h3.raw - 0.25f64.powf(1.5)).abs() < 1e-15);
        // Exponent preconditions.
        assert!(norm_m(&one, 0.5, &g, 1.0, &cfg).is_err());
        assert!(norm_h(&one, 1.0, &g, 1.0, &cfg).is_err());
    }

    #[test]
    fn test_scenarios_norm_s_state_lower_bound() {
        // sup |B|^2 >= B_T^2, whose sublinear expectation is sigma_high_sq*T.
        let g = band12();
        let cfg = quick_cfg(20_000, 1.0 / 64.0);
        let state = |p: &SamplePath, i: usize| p.b[i];
        let s = norm_s(&state, 2.0, &g, 1.0, &cfg).unwrap();
        assert!(
            s.raw >= 2.0 - 3.0 * s.stderr,
            "raw {} stderr {}",
            s.raw,
            s.stderr
        );
    }

    #[test]
    fn test_scenarios_norm_m_tilde_oracles() {
        let g = band12();
        let cfg = quick_cfg(4_000, 1.0 / 64.0);
        let one = |_: &SamplePath, _: usize| 1.0;
        let t = norm_m_tilde(&one, 2.0, &g, 1.0, &cfg).unwrap();
        assert!((t.raw - 1.0).abs() < 1e-12);
        // int_0^T E[B_s^2] ds = sigma_high_sq * T^2 / 2 at the top control.
        let state = |p: &SamplePath, i: usize| p.b[i];
        let t = norm_m_tilde(&state, 2.0, &g, 1.0, &cfg).unwrap();
        // Left-endpoint quadrature bias is -sigma_high_sq*dt*T/2 ~ 0.016.
        assert!(
            (t.raw - 1.0).abs() < 0.02 + 3.0 * t.stderr,
            "raw {} stderr {}",
            t.raw,
            t.stderr
        );
        assert!(norm_m_tilde(&one, 3.0, &g, 1.0, &cfg).is_err());
    }

    #[test]
    fn test_scenarios_step_integrand_alignment() {
        use crate::grid::TimePartition;
        let part = TimePartition::new(vec![0.0, 0.5, 1.0]).unwrap();
        let sp = StepProcess::piecewise_constant(part, vec![1.0, -1.0]).unwrap();
        let cfg = quick_cfg(4, 1.0 / 8.0);
        let g = band12();
        let eta = step_integrand(&sp, 1.0, &cfg).unwrap();
        let sc = Scenario::constant(&g, 1.0).unwrap();
        let path = &simulate(&sc, 1.0, &cfg).unwrap()[0];
        assert_eq!(eta(path, 0), 1.0);
        assert_eq!(eta(path, 3), 1.0); // t = 3/8 in the first half
        assert_eq!(eta(path, 4), -1.0); // right convention at the switch
        assert_eq!(eta(path, 8), -1.0);
        // Misaligned partition rejected.
        let part = TimePartition::new(vec![0.0, 0.3, 1.0]).unwrap();
        let sp = StepProcess::piecewise_constant(part, vec![1.0, -1.0]).unwrap();
        assert!(step_integrand(&sp, 1.0, &cfg).is_err());
        // |eta| = 1 so the M-norm aggregate is exactly T.
        let part = TimePartition::new(vec![0.0, 0.5, 1.0]).unwrap();
        let sp = StepProcess::piecewise_constant(part, vec![1.0, -1.0]).unwrap();
        let eta = step_integrand(&sp, 1.0, &cfg).unwrap();
        let m = norm_m(&eta, 2.0, &g, 1.0, &cfg).unwrap();
        assert_eq!(m.raw, 1.0);
    }

    #[test]
    fn test_scenarios_csv_shapes() {
        let g = band12();
        let sc = Scenario::constant(&g, 1.0).unwrap();
        let paths = simulate(&sc, 0.5, &quick_cfg(2, 0.25)).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&paths, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,b,qv");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("0,0.0000000000000000e0,0.0000000000000000e0,"));

        let est = McEstimate {
            name: "demo".into(),
            value: 1.5,
            stderr: 0.25,
            n_paths: 10,
            seed: 3,
        };
        let mut buf = Vec::new();
        write_estimates_csv(&[est], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,estimate,stderr,n_paths,seed\n"));
        assert!(text.contains("demo,1.5000000000000000e0,2.5000000000000000e-1,10,3"));
    }

    #[test]
    fn test_scenarios_default_family_size_and_labels() {
        let g = band12();
        let family = default_family(&g, 1.0).unwrap();
        assert_eq!(family.len(), 9 + 6 + 2);
        // Degenerate band collapses to constants only.
        let wiener = SublinearGenerator::standard(1.0, 1.0).unwrap();
        let family = default_family(&wiener, 1.0).unwrap();
        assert_eq!(family.len(), 1 + 1 + 2);
        for sc in &family {
            assert_eq!(sc.sigma_sq(0.3, -1.0), 1.0);
        }
    }
}
