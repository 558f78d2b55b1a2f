//! Compound Poisson claims runoff and its large-portfolio Gaussian limit.
//!
//! With exposure `n`, `M_n ~ Poisson(nλ)` claims are reported. Each claim
//! contributes a vector `G = (H_1, I_1, .., H_T, I_T)` of discounted payments
//! `H_t` and payment indicators `I_t`, so `(C^n, N^n)` is a compound Poisson
//! sum of iid copies of `G`. Hence `Cov = nλ E[G Gᵀ]` exactly for every `n`,
//! and with `a_n = √(nλ)`, `b_n = nλ E[H]` the scaled process converges to a
//! centred Gaussian with covariance `E[G Gᵀ]`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::mappings::ValuationSchedule;
use crate::rng;
use crate::tree::{self, backward_value, BranchSampler, ScenarioTree};

/// Particles per node when conditional laws are approximated.
pub const DEFAULT_PARTICLES: usize = 64;

/// Nonnegative parametric law for severities and development factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositiveLaw {
    Lognormal { mu: f64, sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    Constant { value: f64 },
}

impl PositiveLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, value, expected| Err(Error::Domain { name, value, expected });
        match *self {
            PositiveLaw::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return bad("mu", mu, "finite");
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return bad("sigma", sigma, "sigma >= 0");
                }
                if !self.second_moment().is_finite() {
                    return bad("sigma", sigma, "finite second moment");
                }
            }
            PositiveLaw::Gamma { shape, scale } => {
                if !(shape > 0.0 && shape.is_finite()) {
                    return bad("shape", shape, "shape > 0");
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return bad("scale", scale, "scale > 0");
                }
            }
            PositiveLaw::Constant { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return bad("value", value, "value >= 0");
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PositiveLaw::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            PositiveLaw::Gamma { shape, scale } => shape * scale,
            PositiveLaw::Constant { value } => value,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            PositiveLaw::Lognormal { mu, sigma } => (2.0 * mu + 2.0 * sigma * sigma).exp(),
            PositiveLaw::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            PositiveLaw::Constant { value } => value * value,
        }
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment() - self.mean().powi(2)).max(0.0)
    }

    fn sampler(&self) -> LawSampler {
        match *self {
            PositiveLaw::Lognormal { mu, sigma } => {
                LawSampler::Lognormal(LogNormal::new(mu, sigma).expect("validated"))
            }
            PositiveLaw::Gamma { shape, scale } => LawSampler::Gamma(Gamma::new(shape, scale).expect("validated")),
            PositiveLaw::Constant { value } => LawSampler::Constant(value),
        }
    }
}

#[derive(Debug, Clone)]
enum LawSampler {
    Lognormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    Constant(f64),
}

impl LawSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LawSampler::Lognormal(d) => d.sample(rng),
            LawSampler::Gamma(d) => d.sample(rng),
            LawSampler::Constant(v) => *v,
        }
    }
}

/// How a claim's payments are spread over the periods.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentPattern {
    /// One payment `F·Z` in a random period `D ~ delays`.
    #[default]
    Single,
    /// A payment `delays_t·F·Z_t` in every period, with iid `Z_t`.
    Spread,
}

/// Information generating the filtration besides the payments themselves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Information {
    #[default]
    Payments,
    /// Payments and the number of payments per period.
    PaymentsAndCounts,
}

impl Information {
    pub fn aux_dim(self) -> usize {
        match self {
            Information::Payments => 0,
            Information::PaymentsAndCounts => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioModel {
    /// Expected claims per unit exposure.
    pub lambda: f64,
    /// Payment-period probabilities (or payment proportions for the spread
    /// pattern); their count is the horizon.
    pub delays: Vec<f64>,
    pub severity: PositiveLaw,
    /// Common multiplicative factor on all payments of a claim.
    #[serde(default)]
    pub factor: Option<PositiveLaw>,
    /// Per-period discount factors in `(0, 1]`; all ones when absent.
    #[serde(default)]
    pub discount: Option<Vec<f64>>,
    #[serde(default)]
    pub pattern: PaymentPattern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair {
    pub a: f64,
    pub b: Vec<f64>,
}

impl ScalingPair {
    /// `a⁻¹ (c - b)`.
    pub fn scale(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(&self.b).map(|(c, b)| (c - b) / self.a).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CashflowSample {
    /// Discounted payments per period.
    pub c: Vec<f64>,
    /// Number of payments per period.
    pub counts: Vec<u64>,
}

/// One run of the large-portfolio comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalValue {
    pub n: u64,
    /// `V_0^n(C^n)` on the nested-simulation tree.
    pub v0_raw: f64,
    /// `V_0^n(X^n)` on the same tree after centring and scaling.
    pub v0_scaled: f64,
    /// `V_0(X)` of the Gaussian limit.
    pub limit_v0: f64,
    /// `a_n V_0(X) + Σ_t b_{n,t}`.
    pub approximation: f64,
    /// `(V_0^n(C^n) - approximation) / a_n`.
    pub signed_gap: f64,
    pub gap: f64,
    pub a_n: f64,
    pub b_n: Vec<f64>,
    /// False when children were drawn from the particle approximation.
    pub exact_conditional: bool,
}

impl PortfolioModel {
    /// Three periods, `λ = 1`, uniform delays, lognormal(0, 0.5) severities, no factor.
    pub fn default_scenario() -> Self {
        Self {
            lambda: 1.0,
            delays: vec![1.0 / 3.0; 3],
            severity: PositiveLaw::Lognormal { mu: 0.0, sigma: 0.5 },
            factor: None,
            discount: None,
            pattern: PaymentPattern::Single,
        }
    }

    pub fn horizon(&self) -> usize {
        self.delays.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain {
                name: "lambda",
                value: self.lambda,
                expected: "lambda > 0",
            });
        }
        if self.delays.is_empty() {
            return Err(Error::invalid("delays must be non-empty"));
        }
        if let Some(&p) = self.delays.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain {
                name: "delays",
                value: p,
                expected: "probabilities >= 0",
            });
        }
        let total: f64 = self.delays.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain {
                name: "delays",
                value: total,
                expected: "sum to 1",
            });
        }
        self.severity.validate()?;
        if let Some(f) = &self.factor {
            f.validate()?;
        }
        if let Some(disc) = &self.discount {
            if disc.len() != self.horizon() {
                return Err(Error::Dimension {
                    what: "discount",
                    expected: self.horizon(),
                    got: disc.len(),
                });
            }
            if let Some(&v) = disc.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::Domain {
                    name: "discount",
                    value: v,
                    expected: "0 < discount <= 1",
                });
            }
        }
        Ok(())
    }

    fn disc(&self, t: usize) -> f64 {
        self.discount.as_ref().map_or(1.0, |d| d[t])
    }

    fn factor_moments(&self) -> (f64, f64) {
        self.factor
            .as_ref()
            .map_or((1.0, 1.0), |f| (f.mean(), f.second_moment()))
    }

    /// `E[I_t]`: probability that a claim pays in period `t` (0-based).
    fn pays_in(&self, t: usize) -> f64 {
        match self.pattern {
            PaymentPattern::Single => self.delays[t],
            PaymentPattern::Spread => f64::from(u8::from(self.delays[t] > 0.0)),
        }
    }

    /// `E[H_t]`, the expected discounted payment of one claim in each period.
    pub fn expected_claim_payments(&self) -> Vec<f64> {
        let (ef, _) = self.factor_moments();
        let ez = self.severity.mean();
        (0..self.horizon())
            .map(|t| self.disc(t) * self.delays[t] * ef * ez)
            .collect()
    }

    pub fn clt_scaling(&self, n: u64) -> Result<ScalingPair> {
        self.validate()?;
        check_exposure(n)?;
        let volume = n as f64 * self.lambda;
        Ok(ScalingPair {
            a: volume.sqrt(),
            b: self.expected_claim_payments().into_iter().map(|h| volume * h).collect(),
        })
    }

    /// Centring of the count process, `nλ E[I_t]`.
    pub fn count_centering(&self, n: u64) -> Vec<f64> {
        let volume = n as f64 * self.lambda;
        (0..self.horizon()).map(|t| volume * self.pays_in(t)).collect()
    }

    /// `E[G Gᵀ]` for a single claim, in time-blocked order.
    pub fn claim_second_moments(&self, info: Information) -> Vec<f64> {
        let horizon = self.horizon();
        let k = 1 + info.aux_dim();
        let dim = horizon * k;
        let (_, ef2) = self.factor_moments();
        let ef = self.factor_moments().0;
        let (ez, ez2) = (self.severity.mean(), self.severity.second_moment());
        let mut m = vec![0.0; dim * dim];
        let mut set = |i: usize, j: usize, v: f64| {
            m[i * dim + j] = v;
            m[j * dim + i] = v;
        };
        for t in 0..horizon {
            for s in 0..=t {
                let (dt, ds) = (self.disc(t), self.disc(s));
                let (pt, ps) = (self.delays[t], self.delays[s]);
                let (ht, hs) = (t * k, s * k);
                match self.pattern {
                    PaymentPattern::Single => {
                        if s == t {
                            set(ht, ht, dt * dt * pt * ef2 * ez2);
                            if k == 2 {
                                set(ht, ht + 1, dt * pt * ef * ez);
                                set(ht + 1, ht + 1, pt);
                            }
                        }
                    }
                    PaymentPattern::Spread => {
                        let zz = if s == t { ez2 } else { ez * ez };
                        set(ht, hs, dt * ds * pt * ps * ef2 * zz);
                        if k == 2 {
                            let (it, is) = (self.pays_in(t), self.pays_in(s));
                            set(ht, hs + 1, dt * pt * ef * ez * is);
                            set(hs, ht + 1, ds * ps * ef * ez * it);
                            set(ht + 1, hs + 1, it * is);
                        }
                    }
                }
            }
        }
        m
    }

    /// Centred Gaussian limit of `(X^n, Y^n)`.
    pub fn gaussian_limit(&self, info: Information) -> Result<GaussianModel> {
        self.validate()?;
        let dim = self.horizon() * (1 + info.aux_dim());
        GaussianModel::new(
            self.horizon(),
            info.aux_dim(),
            vec![0.0; dim],
            self.claim_second_moments(info),
        )
    }

    /// Whether nested simulation draws children from the exact conditional law.
    pub fn exact_conditional(&self, info: Information) -> bool {
        match self.pattern {
            PaymentPattern::Single => true,
            PaymentPattern::Spread => {
                self.factor.is_none() && info == Information::PaymentsAndCounts && self.delays[0] > 0.0
            }
        }
    }

    pub fn simulate_cashflow(&self, n: u64, seed: u64) -> Result<CashflowSample> {
        self.validate()?;
        check_exposure(n)?;
        Ok(self.draw(n, &mut rng::stream(rng::root_key(seed))))
    }

    /// `reps` independent cashflows; replication `r` uses its own keyed stream.
    pub fn simulate_replications(&self, n: u64, reps: usize, seed: u64) -> Result<Vec<CashflowSample>> {
        self.validate()?;
        check_exposure(n)?;
        let root = rng::root_key(seed);
        Ok((0..reps as u64)
            .into_par_iter()
            .map(|r| self.draw(n, &mut rng::stream(rng::child_key(root, r))))
            .collect())
    }

    fn draw(&self, n: u64, rng: &mut ChaCha8Rng) -> CashflowSample {
        let horizon = self.horizon();
        let severity = self.severity.sampler();
        let factor = self.factor.as_ref().map(PositiveLaw::sampler);
        let m = poisson(n as f64 * self.lambda, rng);
        let mut c = vec![0.0; horizon];
        let mut counts = vec![0u64; horizon];
        let delay = WeightedIndex::new(&self.delays).expect("validated delays");
        for _ in 0..m {
            let f = factor.as_ref().map_or(1.0, |d| d.sample(rng));
            match self.pattern {
                PaymentPattern::Single => {
                    let t = delay.sample(rng);
                    c[t] += self.disc(t) * f * severity.sample(rng);
                    counts[t] += 1;
                }
                PaymentPattern::Spread => {
                    for t in 0..horizon {
                        if self.delays[t] > 0.0 {
                            c[t] += self.disc(t) * self.delays[t] * f * severity.sample(rng);
                            counts[t] += 1;
                        }
                    }
                }
            }
        }
        CashflowSample { c, counts }
    }

    /// Nested-simulation tree of the raw cashflow `C^n` (and raw counts when observed).
    pub fn build_tree(&self, n: u64, info: Information, branching: &[usize], seed: u64) -> Result<ScenarioTree> {
        let sampler = PortfolioSampler::new(self, n, info)?;
        tree::sample_tree(&sampler, branching, seed)
    }

    /// Values `C^n` on a nested-simulation tree and compares with the
    /// Gaussian-limit approximation `a_n V_0(X) + Σ_t b_{n,t}`.
    pub fn empirical_value(
        &self,
        n: u64,
        schedule: &ValuationSchedule,
        branching: &[usize],
        seed: u64,
        info: Information,
    ) -> Result<EmpiricalValue> {
        let tree = self.build_tree(n, info, branching, seed)?;
        self.value_tree(&tree, n, schedule, info)
    }

    /// As [`empirical_value`](Self::empirical_value) on a prebuilt raw tree.
    pub fn value_tree(
        &self,
        tree: &ScenarioTree,
        n: u64,
        schedule: &ValuationSchedule,
        info: Information,
    ) -> Result<EmpiricalValue> {
        let scaling = self.clt_scaling(n)?;
        let limit_v0 = self.gaussian_limit(info)?.limit_value(schedule)?;
        let v0_raw = backward_value(tree, schedule)?.v0;
        let shift: Vec<f64> = scaling.b.iter().map(|b| -b / scaling.a).collect();
        let scaled = tree.affine_transform(1.0 / scaling.a, &shift)?;
        let v0_scaled = backward_value(&scaled, schedule)?.v0;
        let b_sum: f64 = scaling.b.iter().sum();
        let approximation = scaling.a * limit_v0 + b_sum;
        let signed_gap = (v0_raw - approximation) / scaling.a;
        Ok(EmpiricalValue {
            n,
            v0_raw,
            v0_scaled,
            limit_v0,
            approximation,
            signed_gap,
            gap: signed_gap.abs(),
            a_n: scaling.a,
            b_n: scaling.b,
            exact_conditional: self.exact_conditional(info),
        })
    }
}

fn check_exposure(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("exposure n must be positive"))
    } else {
        Ok(())
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Conditional one-period simulation of the compound model for tree building.
///
/// For the single-payment pattern the periods are independent (Poisson
/// thinning), so each child is an exact draw of the next period. For the
/// spread pattern the claim count and the claims' factors are latent; they are
/// represented by prior particles reweighted with a Gaussian approximation to
/// the likelihood of the observed payments, then resampled per child.
pub struct PortfolioSampler<'a> {
    model: &'a PortfolioModel,
    volume: f64,
    info: Information,
    particles: usize,
    severity: LawSampler,
    factor: Option<LawSampler>,
}

impl<'a> PortfolioSampler<'a> {
    pub fn new(model: &'a PortfolioModel, n: u64, info: Information) -> Result<Self> {
        model.validate()?;
        check_exposure(n)?;
        Ok(Self {
            model,
            volume: n as f64 * model.lambda,
            info,
            particles: DEFAULT_PARTICLES,
            severity: model.severity.sampler(),
            factor: model.factor.as_ref().map(PositiveLaw::sampler),
        })
    }

    pub fn with_particles(mut self, particles: usize) -> Self {
        self.particles = particles.max(1);
        self
    }

    fn draw_factors(&self, m: u64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        self.factor.as_ref().map(|d| (0..m).map(|_| d.sample(rng)).collect())
    }

    /// Spread-pattern payment in period `t` for claims with the given factors.
    fn spread_payment(&self, t: usize, m: u64, factors: Option<&[f64]>, rng: &mut ChaCha8Rng) -> f64 {
        let scale = self.model.disc(t) * self.model.delays[t];
        if scale == 0.0 {
            return 0.0;
        }
        let total: f64 = match factors {
            Some(f) => f.iter().map(|f| f * self.severity.sample(rng)).sum(),
            None => (0..m).map(|_| self.severity.sample(rng)).sum(),
        };
        scale * total
    }

    fn sample_spread(&self, xs: &[f64], ys: &[f64], rng: &mut ChaCha8Rng, x_out: &mut [f64], y_out: &mut [f64]) {
        let model = self.model;
        let t = xs.len();
        let counts = self.info == Information::PaymentsAndCounts;
        let pays = u64::from(model.delays[t] > 0.0);
        let write = |c: usize, x: f64, m: u64, x_out: &mut [f64], y_out: &mut [f64]| {
            x_out[c] = x;
            if counts {
                y_out[c] = (m * pays) as f64;
            }
        };
        if t == 0 {
            for c in 0..x_out.len() {
                let m = poisson(self.volume, rng);
                let f = self.draw_factors(m, rng);
                let x = self.spread_payment(t, m, f.as_deref(), rng);
                write(c, x, m, x_out, y_out);
            }
            return;
        }
        let known_m = if counts {
            (0..t).find(|&s| model.delays[s] > 0.0).map(|s| ys[s] as u64)
        } else {
            None
        };
        if let (Some(m), None) = (known_m, &self.factor) {
            for c in 0..x_out.len() {
                let x = self.spread_payment(t, m, None, rng);
                write(c, x, m, x_out, y_out);
            }
            return;
        }

        let (ez, vz) = (model.severity.mean(), model.severity.variance());
        let mut states = Vec::with_capacity(self.particles);
        let mut log_w = Vec::with_capacity(self.particles);
        for _ in 0..self.particles {
            let m = known_m.unwrap_or_else(|| poisson(self.volume, rng));
            let f = self.draw_factors(m, rng);
            let (s1, s2) = match &f {
                Some(f) => (f.iter().sum::<f64>(), f.iter().map(|v| v * v).sum::<f64>()),
                None => (m as f64, m as f64),
            };
            let mut lw = 0.0;
            for (s, &x) in xs.iter().enumerate() {
                let scale = model.disc(s) * model.delays[s];
                if scale == 0.0 {
                    continue;
                }
                let mean = scale * ez * s1;
                let floor = 1e-6 * (mean.abs() + scale * ez.max(1e-300));
                let var = (scale * scale * vz * s2).max(floor * floor);
                lw -= 0.5 * ((x - mean).powi(2) / var + var.ln());
            }
            states.push((m, f));
            log_w.push(lw);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let pick = WeightedIndex::new(&weights).expect("at least one particle has positive weight");
        for c in 0..x_out.len() {
            let (m, f) = &states[pick.sample(rng)];
            let x = self.spread_payment(t, *m, f.as_deref(), rng);
            write(c, x, *m, x_out, y_out);
        }
    }
}

impl BranchSampler for PortfolioSampler<'_> {
    fn horizon(&self) -> usize {
        self.model.horizon()
    }

    fn aux_dim(&self) -> usize {
        self.info.aux_dim()
    }

    fn sample_children(&self, xs: &[f64], ys: &[f64], rng: &mut ChaCha8Rng, x_out: &mut [f64], y_out: &mut [f64]) {
        let model = self.model;
        match model.pattern {
            PaymentPattern::Single => {
                let t = xs.len();
                let mean = self.volume * model.delays[t];
                let disc = model.disc(t);
                for (c, x) in x_out.iter_mut().enumerate() {
                    let count = poisson(mean, rng);
                    let total: f64 = (0..count)
                        .map(|_| self.factor.as_ref().map_or(1.0, |f| f.sample(rng)) * self.severity.sample(rng))
                        .sum();
                    *x = disc * total;
                    if self.info == Information::PaymentsAndCounts {
                        y_out[c] = count as f64;
                    }
                }
            }
            PaymentPattern::Spread => self.sample_spread(xs, ys, rng, x_out, y_out),
        }
    }
}
