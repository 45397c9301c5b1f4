//! Gauss-Hermite quadrature and the Gaussian-smoothing reference value.
//!
//! [`linear_heat_reference`] evaluates u(t, x) = E[phi(x + sqrt(t) Z)] for a
//! standard normal Z, which is the exact solution of the linear backward
//! equation d_t u + (1/2) d_xx u = 0. It is computed entirely by quadrature,
//! independent of any finite-difference machinery, so it can arbitrate the
//! PDE solver in the linear case.

use std::sync::OnceLock;

use crate::error::{GcalcError, Result};
use crate::functional::TerminalFunction;

/// Nodes and weights for the weight function exp(-s^2) on the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an `n`-point rule via Golub-Welsch: eigenvalues of the Jacobi
    /// matrix give the nodes, squared first eigenvector components give the
    /// weights (scaled by the total mass sqrt(pi)).
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(GcalcError::Config("quadrature order must be positive".into()));
        }
        let mut d = vec![0.0; n]; // Hermite recurrence has zero diagonal
        let mut e: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
        e.push(0.0);
        let mut z = vec![0.0; n];
        z[0] = 1.0;
        tridiag_eig_first_row(&mut d, &mut e, &mut z)?;

        let total = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = d
            .iter()
            .zip(z.iter())
            .map(|(&x, &q)| (x, total * q * q))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Quadrature nodes in ascending order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights matching [`Self::nodes`]; they sum to sqrt(pi).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` against exp(-s^2) ds.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&s, &w)| w * f(s))
            .collect();
        crate::parallel::pairwise_sum(&terms)
    }

    /// Expectation of `f(Z)` for standard normal Z (substitution z = sqrt(2) s).
    pub fn gaussian_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        inv_sqrt_pi * self.integrate(|s| f(std::f64::consts::SQRT_2 * s))
    }
}

/// Nodes and weights on [-1, 1] with unit weight function, used for
/// piecewise integration between declared non-smooth points.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(GcalcError::Config("quadrature order must be positive".into()));
        }
        let mut d = vec![0.0; n]; // Legendre recurrence has zero diagonal
        let mut e: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        e.push(0.0);
        let mut z = vec![0.0; n];
        z[0] = 1.0;
        tridiag_eig_first_row(&mut d, &mut e, &mut z)?;

        let mut pairs: Vec<(f64, f64)> = d
            .iter()
            .zip(z.iter())
            .map(|(&x, &q)| (x, 2.0 * q * q))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights matching [`Self::nodes`]; they sum to 2.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over `[a, b]` by the affine map from `[-1, 1]`.
    pub fn integrate_on(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&s, &w)| w * f(mid + half * s))
            .collect();
        half * crate::parallel::pairwise_sum(&terms)
    }
}

/// Implicit-shift QL for a symmetric tridiagonal matrix, accumulating the
/// rotations only on the first-row vector `z` (all that Golub-Welsch needs).
/// `d` holds the diagonal and returns the eigenvalues; `e` holds the
/// off-diagonal in `e[0..n-1]`.
fn tridiag_eig_first_row(d: &mut [f64], e: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find the first negligible off-diagonal at or after l.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(GcalcError::Config(
                    "quadrature eigen-iteration failed to converge".into(),
                ));
            }
            // Wilkinson-style shift.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut i = m;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // Rotate the tracked first-row components.
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && i > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Quadrature orders used by the self-checking reference: the value is
/// accepted only if the coarse and refined rules agree.
const REF_ORDER: usize = 512;
const REF_ORDER_CHECK: usize = 768;
/// Per-panel orders for the piecewise rule used when the terminal declares
/// non-smooth points.
const PANEL_ORDER: usize = 24;
const PANEL_ORDER_CHECK: usize = 32;
/// Standard-normal truncation for the piecewise rule; the discarded tail mass
/// is below 1e-31 and irrelevant for polynomially growing terminals.
const Z_CUT: f64 = 12.0;

fn cached_hermite(order: usize, slot: &OnceLock<GaussHermite>) -> &GaussHermite {
    slot.get_or_init(|| GaussHermite::new(order).expect("static quadrature order is valid"))
}

fn cached_legendre(order: usize, slot: &OnceLock<GaussLegendre>) -> &GaussLegendre {
    slot.get_or_init(|| GaussLegendre::new(order).expect("static quadrature order is valid"))
}

/// `E[terminal(x + scale Z)]` by Gauss-Legendre panels against the normal
/// density, with panel edges on the images of the declared breakpoints so
/// each panel sees an analytic integrand.
fn panel_expectation(terminal: &TerminalFunction, scale: f64, x: f64, rule: &GaussLegendre) -> f64 {
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut cuts = vec![-Z_CUT];
    for &b in terminal.breakpoints() {
        let zb = (b - x) / scale;
        if zb > -Z_CUT && zb < Z_CUT {
            cuts.push(zb);
        }
    }
    cuts.push(Z_CUT);
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut parts = Vec::new();
    for w in cuts.windows(2) {
        // Panels no wider than one standard deviation keep the per-panel
        // interpolation error near machine precision.
        let n_panels = (w[1] - w[0]).ceil().max(1.0) as usize;
        let step = (w[1] - w[0]) / n_panels as f64;
        for p in 0..n_panels {
            let a = w[0] + p as f64 * step;
            parts.push(rule.integrate_on(a, a + step, |z| {
                terminal.eval(x + scale * z) * (-0.5 * z * z).exp() * inv_sqrt_2pi
            }));
        }
    }
    crate::parallel::pairwise_sum(&parts)
}

/// Exact-in-distribution value of the linear smoothing semigroup:
/// `E[terminal(x + sqrt(elapsed) Z)]`, Z standard normal.
///
/// Smooth terminals integrate with two Gauss-Hermite orders; terminals with
/// declared breakpoints use Gauss-Legendre panels split at the kink images
/// (again at two orders). Disagreement between the orders beyond a small
/// relative tolerance — the terminal growing too fast for a Gaussian tail,
/// for instance — is reported as [`GcalcError::QuadratureDiverged`] carrying
/// the refined partial estimate.
pub fn linear_heat_reference(terminal: &TerminalFunction, elapsed: f64, x: f64) -> Result<f64> {
    if !elapsed.is_finite() || elapsed < 0.0 {
        return Err(GcalcError::Domain(format!(
            "elapsed time must be finite and non-negative, got {elapsed}"
        )));
    }
    if elapsed == 0.0 {
        return Ok(terminal.eval(x));
    }
    let scale = elapsed.sqrt();
    let (coarse, fine) = if terminal.breakpoints().is_empty() {
        static COARSE: OnceLock<GaussHermite> = OnceLock::new();
        static FINE: OnceLock<GaussHermite> = OnceLock::new();
        (
            cached_hermite(REF_ORDER, &COARSE)
                .gaussian_expectation(|z| terminal.eval(x + scale * z)),
            cached_hermite(REF_ORDER_CHECK, &FINE)
                .gaussian_expectation(|z| terminal.eval(x + scale * z)),
        )
    } else {
        static COARSE: OnceLock<GaussLegendre> = OnceLock::new();
        static FINE: OnceLock<GaussLegendre> = OnceLock::new();
        (
            panel_expectation(terminal, scale, x, cached_legendre(PANEL_ORDER, &COARSE)),
            panel_expectation(terminal, scale, x, cached_legendre(PANEL_ORDER_CHECK, &FINE)),
        )
    };
    let tol = 1e-5 * fine.abs().max(1.0);
    if !fine.is_finite() || (fine - coarse).abs() > tol {
        return Err(GcalcError::QuadratureDiverged { partial: fine });
    }
    Ok(fine)
}
