//! One-step valuation mappings `φ_t`.
//!
//! A mapping takes the conditional law of `Y = X_{t+1} + V_{t+1}` given the
//! current state and returns the time-`t` value. All variants are positively
//! homogeneous and conditionally cash additive, so `φ(aY + b) = a φ(Y) + b`.
//!
//! Risk measures inside the mappings are applied to the position `-Y`:
//! `ρ(-Y) = ∫ F⁻¹_Y(p) μ(dp)`, an upper quantile average of the liability.

use crate::dist::{SpectralMeasure, WeightedSample};
use crate::error::{Error, Result};
use crate::normal;

/// Lower end of the quadrature range for the power-utility closed form; the
/// normal tail below it contributes less than `1e-30`.
const QUAD_LOWER: f64 = -12.0;
const QUAD_PANELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum OneStepMapping {
    /// Cost-of-capital valuation without limited liability:
    /// `E[Y]/(1+η) + η/(1+η) ρ(-Y)`.
    CostOfCapital { eta: f64, rho: SpectralMeasure },
    /// Limited-liability family `r - γ E[((r - Y)⁺)^β]^{1/β}` with `r = ρ(-Y)`.
    /// Cost of capital with limited liability is `γ = 1/(1+η), β = 1`;
    /// power utility is `γ = 1`.
    LimitedLiability {
        gamma: f64,
        beta: f64,
        rho: SpectralMeasure,
    },
    /// `E[Y] + c sd(Y)`. Not monotone.
    MeanStd { c: f64 },
    /// `λ ∫ F⁻¹_Y dμ¹ + (1-λ) ∫ F⁻¹_Y dμ²`. Cost of capital is `μ¹ = dp`,
    /// `λ = 1/(1+η)`.
    QuantileMixture {
        lambda: f64,
        mu1: SpectralMeasure,
        mu2: SpectralMeasure,
    },
}

fn domain(name: &'static str, value: f64, expected: &'static str) -> Error {
    Error::Domain { name, value, expected }
}

impl OneStepMapping {
    pub fn cost_of_capital(eta: f64, rho: SpectralMeasure) -> Result<Self> {
        let m = Self::CostOfCapital { eta, rho };
        m.validate()?;
        Ok(m)
    }

    pub fn limited_liability(gamma: f64, beta: f64, rho: SpectralMeasure) -> Result<Self> {
        let m = Self::LimitedLiability { gamma, beta, rho };
        m.validate()?;
        Ok(m)
    }

    /// Cost of capital with limited liability.
    pub fn coc_ll(eta: f64, rho: SpectralMeasure) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(domain("eta", eta, "eta >= 0"));
        }
        Self::limited_liability(1.0 / (1.0 + eta), 1.0, rho)
    }

    /// Power-utility acceptability with limited liability, `u(x) = α x^β`.
    pub fn power_utility(beta: f64, rho: SpectralMeasure) -> Result<Self> {
        Self::limited_liability(1.0, beta, rho)
    }

    pub fn mean_std(c: f64) -> Result<Self> {
        let m = Self::MeanStd { c };
        m.validate()?;
        Ok(m)
    }

    pub fn quantile_mixture(lambda: f64, mu1: SpectralMeasure, mu2: SpectralMeasure) -> Result<Self> {
        let m = Self::QuantileMixture { lambda, mu1, mu2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::CostOfCapital { eta, rho } => {
                if !(*eta >= 0.0 && eta.is_finite()) {
                    return Err(domain("eta", *eta, "eta >= 0"));
                }
                rho.validate()
            }
            Self::LimitedLiability { gamma, beta, rho } => {
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return Err(domain("gamma", *gamma, "gamma >= 0"));
                }
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(domain("beta", *beta, "beta in (0, 1]"));
                }
                rho.validate()
            }
            Self::MeanStd { c } => {
                if *c >= 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(domain("c", *c, "c >= 0"))
                }
            }
            Self::QuantileMixture { lambda, mu1, mu2 } => {
                if !(0.0..=1.0).contains(lambda) {
                    return Err(domain("lambda", *lambda, "lambda in [0, 1]"));
                }
                mu1.validate()?;
                mu2.validate()
            }
        }
    }

    /// `φ(Y)` for the finite conditional law of `Y`.
    pub fn apply(&self, law: &WeightedSample) -> Result<f64> {
        match self {
            Self::CostOfCapital { eta, rho } => {
                let risk = law.quantile_integral(rho)?;
                Ok((law.mean() + eta * risk) / (1.0 + eta))
            }
            Self::LimitedLiability { gamma, beta, rho } => {
                let r = law.quantile_integral(rho)?;
                let shortfall: f64 = law
                    .values()
                    .iter()
                    .zip(law.weights())
                    .map(|(y, w)| {
                        let excess = r - y;
                        if excess > 0.0 {
                            w * excess.powf(*beta)
                        } else {
                            0.0
                        }
                    })
                    .sum();
                if shortfall == 0.0 {
                    return Ok(r);
                }
                Ok(r - gamma * shortfall.powf(1.0 / beta))
            }
            Self::MeanStd { c } => Ok(law.mean() + c * law.std_dev()),
            Self::QuantileMixture { lambda, mu1, mu2 } => {
                let first = law.quantile_integral(mu1)?;
                let second = law.quantile_integral(mu2)?;
                Ok(lambda * first + (1.0 - lambda) * second)
            }
        }
    }

    /// `φ(ε)` for `ε` standard normal, in closed form (quadrature for the
    /// power-utility case with `β < 1`).
    pub fn of_standard_normal(&self) -> f64 {
        match self {
            Self::CostOfCapital { eta, rho } => eta / (1.0 + eta) * normal::quantile_integral(rho),
            Self::LimitedLiability { gamma, beta, rho } => {
                let r = normal::quantile_integral(rho);
                if *beta == 1.0 {
                    r - gamma * (r * normal::cdf(r) + normal::pdf(r))
                } else if r <= QUAD_LOWER {
                    r
                } else {
                    let moment =
                        normal::integrate(|z| (r - z).powf(*beta) * normal::pdf(z), QUAD_LOWER, r, QUAD_PANELS);
                    r - gamma * moment.powf(1.0 / beta)
                }
            }
            Self::MeanStd { c } => *c,
            Self::QuantileMixture { lambda, mu1, mu2 } => {
                lambda * normal::quantile_integral(mu1) + (1.0 - lambda) * normal::quantile_integral(mu2)
            }
        }
    }

    /// Constant `c` with `|φ(Y)| <= c E|Y|` for every finite law, or `None`
    /// for [`MeanStd`](Self::MeanStd), which admits no such `L¹` bound.
    pub fn bound_constant(&self) -> Option<f64> {
        match self {
            Self::CostOfCapital { eta, rho } => {
                let lambda = 1.0 / (1.0 + eta);
                Some(lambda + (1.0 - lambda) * rho.bound_constant())
            }
            Self::LimitedLiability { gamma, rho, .. } => {
                let c = rho.bound_constant();
                Some(c + gamma * (c + 1.0))
            }
            Self::MeanStd { .. } => None,
            Self::QuantileMixture { lambda, mu1, mu2 } => {
                Some(lambda * mu1.bound_constant() + (1.0 - lambda) * mu2.bound_constant())
            }
        }
    }

    /// Constant `c` with `φ(Y)² <= c E[Y²]`; the `L²` analogue used for
    /// [`MeanStd`](Self::MeanStd).
    pub fn second_moment_bound_constant(&self) -> f64 {
        match self {
            Self::MeanStd { c } => 2.0 + 2.0 * c * c,
            other => {
                let c = other.bound_constant().expect("L1 bound exists");
                c * c
            }
        }
    }

    /// Whether `Ỹ >= Y` implies `φ(Ỹ) >= φ(Y)`.
    pub fn is_monotone(&self) -> bool {
        !matches!(self, Self::MeanStd { .. })
    }
}

/// The mappings `φ_0, ..., φ_{T-1}` of a valuation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationSchedule {
    mappings: Vec<OneStepMapping>,
}

impl ValuationSchedule {
    pub fn new(mappings: Vec<OneStepMapping>) -> Result<Self> {
        if mappings.is_empty() {
            return Err(Error::invalid("valuation schedule needs at least one mapping"));
        }
        for m in &mappings {
            m.validate()?;
        }
        Ok(Self { mappings })
    }

    /// The same mapping at every time step.
    pub fn constant(mapping: OneStepMapping, horizon: usize) -> Result<Self> {
        Self::new(vec![mapping; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.mappings.len()
    }

    pub fn mappings(&self) -> &[OneStepMapping] {
        &self.mappings
    }

    /// `φ_t`.
    pub fn at(&self, t: usize) -> &OneStepMapping {
        &self.mappings[t]
    }

    pub(crate) fn check_horizon(&self, horizon: usize) -> Result<()> {
        if self.horizon() == horizon {
            Ok(())
        } else {
            Err(Error::Dimension {
                what: "valuation schedule length",
                expected: horizon,
                got: self.horizon(),
            })
        }
    }
}
