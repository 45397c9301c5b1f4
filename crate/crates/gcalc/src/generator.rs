//! Sublinear generators G acting on the second-derivative argument.
//!
//! The standard generator with volatility-squared band [sl, sh] is
//! `G(a) = (sh * a^+ - sl * a^-) / 2`; it is monotone, subadditive and
//! positively homogeneous. Three companions are provided: the linear
//! half-Laplacian `a/2` (band collapsed to [1, 1]), an epsilon-shrunk band
//! `G_eps(a) = ((sh - eps) a^+ - (sl + eps) a^-) / 2`, and the symmetrized
//! `G^eta(a) = (G(a + eta) + G(a - eta)) / 2` whose shift eta is resolved
//! from an explicit evaluation context rather than any global state.

use crate::error::{GcalcError, Result};

/// Where an eta-symmetrized generator finds its shift value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSource {
    /// Fixed scalar shift, usable without a context.
    Constant(f64),
    /// Shift must be supplied through [`EvalContext::eta`] at call time.
    FromContext,
}

/// Evaluation context for generators whose value depends on where in
/// (time, state) they are being applied.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalContext {
    pub time: f64,
    pub state: f64,
    /// Resolved shift for [`EtaSource::FromContext`] generators.
    pub eta: Option<f64>,
}

/// Generator of the nonlinear heat operator `d_t u + G(d_xx u) = 0`.
#[derive(Debug, Clone)]
pub enum SublinearGenerator {
    /// `G(a) = (sh a^+ - sl a^-) / 2` with 0 <= sl <= sh.
    Standard { sigma_low_sq: f64, sigma_high_sq: f64 },
    /// Linear case `a -> a / 2` (unit volatility band).
    Linear,
    /// Band shrunk by eps at both ends, 0 <= eps <= (sh - sl) / 2.
    EpsShrunk {
        sigma_low_sq: f64,
        sigma_high_sq: f64,
        eps: f64,
    },
    /// `G^eta(a) = (G(a + eta) + G(a - eta)) / 2` over the standard band.
    EtaSymmetrized {
        sigma_low_sq: f64,
        sigma_high_sq: f64,
        eta: EtaSource,
    },
}

#[inline]
fn standard_eval(sl: f64, sh: f64, a: f64) -> f64 {
    // a^+ and a^- split; multiplication by non-negative halves is monotone.
    if a >= 0.0 {
        0.5 * sh * a
    } else {
        0.5 * sl * a
    }
}

fn check_band(sl: f64, sh: f64) -> Result<()> {
    if !(sl.is_finite() && sh.is_finite()) || sl < 0.0 || sl > sh {
        return Err(GcalcError::Config(format!(
            "volatility band requires 0 <= sigma_low_sq <= sigma_high_sq, got [{sl}, {sh}]"
        )));
    }
    Ok(())
}

impl SublinearGenerator {
    /// Standard generator over the band `[sigma_low_sq, sigma_high_sq]`.
    pub fn standard(sigma_low_sq: f64, sigma_high_sq: f64) -> Result<Self> {
        check_band(sigma_low_sq, sigma_high_sq)?;
        Ok(Self::Standard {
            sigma_low_sq,
            sigma_high_sq,
        })
    }

    /// Linear generator `a -> a / 2`.
    pub fn linear() -> Self {
        Self::Linear
    }

    /// Epsilon-shrunk generator; requires `0 <= eps <= (sh - sl) / 2` so the
    /// shrunk band stays ordered.
    pub fn eps_shrunk(sigma_low_sq: f64, sigma_high_sq: f64, eps: f64) -> Result<Self> {
        check_band(sigma_low_sq, sigma_high_sq)?;
        if !eps.is_finite() || eps < 0.0 || eps > (sigma_high_sq - sigma_low_sq) / 2.0 {
            return Err(GcalcError::Config(format!(
                "eps must lie in [0, (sh - sl)/2] = [0, {}], got {eps}",
                (sigma_high_sq - sigma_low_sq) / 2.0
            )));
        }
        Ok(Self::EpsShrunk {
            sigma_low_sq,
            sigma_high_sq,
            eps,
        })
    }

    /// Eta-symmetrized generator over the standard band.
    pub fn eta_symmetrized(sigma_low_sq: f64, sigma_high_sq: f64, eta: EtaSource) -> Result<Self> {
        check_band(sigma_low_sq, sigma_high_sq)?;
        if let EtaSource::Constant(v) = eta {
            if !v.is_finite() {
                return Err(GcalcError::Config(format!("eta shift must be finite, got {v}")));
            }
        }
        Ok(Self::EtaSymmetrized {
            sigma_low_sq,
            sigma_high_sq,
            eta,
        })
    }

    /// Volatility-squared band `(sigma_low_sq, sigma_high_sq)` the generator
    /// acts over. The eps-shrunk variant reports its *shrunk* band, which is
    /// what scenario simulation under that generator must respect.
    pub fn sigma_band(&self) -> (f64, f64) {
        match *self {
            Self::Standard {
                sigma_low_sq,
                sigma_high_sq,
            } => (sigma_low_sq, sigma_high_sq),
            Self::Linear => (1.0, 1.0),
            Self::EpsShrunk {
                sigma_low_sq,
                sigma_high_sq,
                eps,
            } => (sigma_low_sq + eps, sigma_high_sq - eps),
            Self::EtaSymmetrized {
                sigma_low_sq,
                sigma_high_sq,
                ..
            } => (sigma_low_sq, sigma_high_sq),
        }
    }

    /// Evaluate without a context. Fails for a context-sourced eta shift.
    pub fn eval(&self, a: f64) -> Result<f64> {
        self.resolved(None).map(|g| g.eval(a))
    }

    /// Evaluate with an explicit context (resolves `EtaSource::FromContext`).
    pub fn eval_in(&self, a: f64, ctx: &EvalContext) -> Result<f64> {
        self.resolved(ctx.eta).map(|g| g.eval(a))
    }

    /// Resolve to a lightweight closed-over form suitable for hot loops.
    ///
    /// `eta_hint` supplies the shift for context-sourced symmetrized
    /// generators; passing `None` for such a generator is a configuration
    /// error, which keeps eta resolution explicit at the call site.
    pub fn resolved(&self, eta_hint: Option<f64>) -> Result<ResolvedGenerator> {
        Ok(match *self {
            Self::Standard {
                sigma_low_sq,
                sigma_high_sq,
            } => ResolvedGenerator::Band {
                sl: sigma_low_sq,
                sh: sigma_high_sq,
            },
            Self::Linear => ResolvedGenerator::Band { sl: 1.0, sh: 1.0 },
            Self::EpsShrunk {
                sigma_low_sq,
                sigma_high_sq,
                eps,
            } => ResolvedGenerator::Band {
                sl: sigma_low_sq + eps,
                sh: sigma_high_sq - eps,
            },
            Self::EtaSymmetrized {
                sigma_low_sq,
                sigma_high_sq,
                eta,
            } => {
                let shift = match eta {
                    EtaSource::Constant(v) => v,
                    EtaSource::FromContext => eta_hint.ok_or_else(|| {
                        GcalcError::Config(
                            "eta-symmetrized generator needs an eta value in its evaluation context"
                                .into(),
                        )
                    })?,
                };
                ResolvedGenerator::Symmetrized {
                    sl: sigma_low_sq,
                    sh: sigma_high_sq,
                    eta: shift,
                }
            }
        })
    }

    /// Band ratio constants: `beta = sh / sl` and `gamma = (beta - 1) / (beta + 1)`.
    ///
    /// Requires a strictly positive lower band edge.
    pub fn beta_gamma(&self) -> Result<(f64, f64)> {
        let (sl, sh) = self.sigma_band();
        if sl <= 0.0 {
            return Err(GcalcError::Precondition(
                "band ratio needs sigma_low_sq > 0".into(),
            ));
        }
        let beta = sh / sl;
        Ok((beta, (beta - 1.0) / (beta + 1.0)))
    }
}

/// Branch-free-enough resolved form: all variants evaluate in a few flops
/// with no allocation, no fallibility and no dynamic dispatch.
#[derive(Debug, Clone, Copy)]
pub enum ResolvedGenerator {
    Band { sl: f64, sh: f64 },
    Symmetrized { sl: f64, sh: f64, eta: f64 },
}

impl ResolvedGenerator {
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match *self {
            Self::Band { sl, sh } => standard_eval(sl, sh, a),
            Self::Symmetrized { sl, sh, eta } => {
                0.5 * (standard_eval(sl, sh, a + eta) + standard_eval(sl, sh, a - eta))
            }
        }
    }
}
