//! Finite weighted distributions and quantile-integral risk measures.
//!
//! Every conditional law on a scenario tree is a [`WeightedSample`]. Quantiles
//! are the left-continuous generalized inverse `min{m : F(m) >= p}` and are
//! exact: a quantile function of a finite law is a step function of `p`, so
//! integrals against a [`SpectralMeasure`] reduce to finite sums.

use crate::error::{Error, Result};

/// Input weights may deviate from unit mass by this much; they are rescaled.
const WEIGHT_SUM_TOL: f64 = 1e-6;
/// Slack used when comparing cumulative weights against a level `p`.
const CUM_TOL: f64 = 1e-12;
/// Piecewise densities may deviate from unit mass by this much; they are rescaled.
const DENSITY_MASS_TOL: f64 = 1e-6;

/// A finite probability distribution on the real line.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
    /// Distinct values with positive weight, ascending.
    atoms: Vec<f64>,
    /// `cumulative[j] = P(Y <= atoms[j])`; the last entry is exactly 1.
    cumulative: Vec<f64>,
}

impl WeightedSample {
    /// Builds a sample from values and probability weights.
    ///
    /// Weights must be nonnegative and sum to 1 up to `1e-6`; they are
    /// rescaled to unit mass.
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total = Self::check_inputs(&values, &weights)?;
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self::normalized(values, weights, total))
    }

    /// Builds a sample from nonnegative weights of arbitrary positive total.
    pub fn from_unnormalized(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total = Self::check_inputs(&values, &weights)?;
        if total <= 0.0 {
            return Err(Error::invalid("weights have zero total mass"));
        }
        Ok(Self::normalized(values, weights, total))
    }

    /// Equal weights `1/n`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0 / n.max(1) as f64; n])
    }

    /// Point mass at `value`.
    pub fn point(value: f64) -> Self {
        Self {
            values: vec![value],
            weights: vec![1.0],
            atoms: vec![value],
            cumulative: vec![1.0],
        }
    }

    fn check_inputs(values: &[f64], weights: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if values.len() != weights.len() {
            return Err(Error::Dimension {
                what: "sample weights",
                expected: values.len(),
                got: weights.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample value {v}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("invalid weight {w}")));
        }
        Ok(weights.iter().sum())
    }

    fn normalized(values: Vec<f64>, mut weights: Vec<f64>, total: f64) -> Self {
        for w in &mut weights {
            *w /= total;
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));

        let mut atoms: Vec<f64> = Vec::with_capacity(values.len());
        let mut masses: Vec<f64> = Vec::with_capacity(values.len());
        for i in order {
            if weights[i] == 0.0 {
                continue;
            }
            match atoms.last() {
                Some(&last) if last == values[i] => *masses.last_mut().unwrap() += weights[i],
                _ => {
                    atoms.push(values[i]);
                    masses.push(weights[i]);
                }
            }
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = masses
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("positive total mass") = 1.0;

        Self {
            values,
            weights,
            atoms,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sorted distinct support points (ties merged).
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Cumulative probabilities aligned with [`atoms`](Self::atoms).
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Population variance (divides by total weight).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let var: f64 = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * (v - m) * (v - m))
            .sum();
        var.max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `E|Y|`.
    pub fn abs_mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v.abs() * w).sum()
    }

    /// Law of `a*Y + b`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let values = self.values.iter().map(|v| a * v + b).collect();
        Self::normalized(values, self.weights.clone(), 1.0)
    }

    /// Law of `-Y`.
    pub fn negated(&self) -> Self {
        self.affine(-1.0, 0.0)
    }

    /// Generalized inverse `min{m : P(Y <= m) >= p}`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_level("p", p)?;
        Ok(self.atoms[self.step_index(p)])
    }

    fn step_index(&self, p: f64) -> usize {
        let j = self.cumulative.partition_point(|&c| c < p - CUM_TOL);
        j.min(self.atoms.len() - 1)
    }

    /// `∫ F⁻¹_Y(p) μ(dp)`, evaluated exactly.
    pub fn quantile_integral(&self, mu: &SpectralMeasure) -> Result<f64> {
        if let SpectralMeasure::PointMass { p } = *mu {
            return self.quantile(p);
        }
        mu.validate()?;
        let mut lo = 0.0;
        let mut total = 0.0;
        let mut mass_seen = 0.0;
        for (&atom, &hi) in self.atoms.iter().zip(&self.cumulative) {
            let mass = mu.mass(lo, hi);
            if mass != 0.0 {
                total += atom * mass;
                mass_seen += mass;
            }
            lo = hi;
        }
        // μ has unit mass; dividing out the rounded total keeps a measure
        // concentrated on one atom exactly at that atom.
        Ok(total / mass_seen)
    }

    /// Quantile-integral risk measure `ρ(Y) = ∫ F⁻¹_{-Y}(p) μ(dp)` of the
    /// position `Y`.
    pub fn spectral_risk(&self, mu: &SpectralMeasure) -> Result<f64> {
        self.negated().quantile_integral(mu)
    }

    /// Value-at-Risk at level `u`: the `1-u` quantile of `-Y`.
    pub fn var_at_level(&self, u: f64) -> Result<f64> {
        check_level("u", u)?;
        self.spectral_risk(&SpectralMeasure::PointMass { p: 1.0 - u })
    }

    /// Average Value-at-Risk at level `u`.
    pub fn avar_at_level(&self, u: f64) -> Result<f64> {
        check_level("u", u)?;
        self.spectral_risk(&SpectralMeasure::TailUniform { u })
    }
}

fn check_level(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: p,
            expected: "open interval (0, 1)",
        })
    }
}

/// Piecewise-constant density on `[breakpoints[0], breakpoints[last]] ⊂ [0, 1]`,
/// zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    /// Mass of `[breakpoints[0], breakpoints[i]]`.
    cum_mass: Vec<f64>,
}

impl PiecewiseDensity {
    /// `levels[i]` is the density on `[breakpoints[i], breakpoints[i+1])`.
    /// Total mass must be 1 up to `1e-6`; levels are rescaled to unit mass.
    pub fn new(breakpoints: Vec<f64>, mut levels: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::invalid("density needs at least two breakpoints"));
        }
        if levels.len() + 1 != breakpoints.len() {
            return Err(Error::Dimension {
                what: "density levels",
                expected: breakpoints.len() - 1,
                got: levels.len(),
            });
        }
        if breakpoints[0] < 0.0 || breakpoints[breakpoints.len() - 1] > 1.0 {
            return Err(Error::invalid("density breakpoints must lie in [0, 1]"));
        }
        if breakpoints
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::invalid("density breakpoints must be strictly increasing"));
        }
        if levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("density levels must be finite and nonnegative"));
        }
        let total: f64 = breakpoints
            .windows(2)
            .zip(&levels)
            .map(|(w, l)| (w[1] - w[0]) * l)
            .sum();
        if (total - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::invalid(format!("density integrates to {total}, expected 1")));
        }
        for l in &mut levels {
            *l /= total;
        }
        let mut cum_mass = Vec::with_capacity(breakpoints.len());
        cum_mass.push(0.0);
        let mut acc = 0.0;
        for (w, l) in breakpoints.windows(2).zip(&levels) {
            acc += (w[1] - w[0]) * l;
            cum_mass.push(acc);
        }
        Ok(Self {
            breakpoints,
            levels,
            cum_mass,
        })
    }

    /// Uniform density on `[a, b]`.
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a, b], vec![1.0 / (b - a)])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], self.breakpoints[self.breakpoints.len() - 1])
    }

    pub fn max_level(&self) -> f64 {
        self.levels.iter().cloned().fold(0.0, f64::max)
    }

    /// Density value at `p` (right-continuous at breakpoints).
    pub fn density_at(&self, p: f64) -> f64 {
        let (a, b) = self.support();
        if p < a || p >= b {
            return 0.0;
        }
        let i = self.breakpoints.partition_point(|&x| x <= p) - 1;
        self.levels[i]
    }

    /// `μ([0, x])`.
    fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return self.cum_mass[self.cum_mass.len() - 1];
        }
        let i = self.breakpoints.partition_point(|&bp| bp <= x) - 1;
        self.cum_mass[i] + (x - self.breakpoints[i]) * self.levels[i]
    }
}

/// A probability measure `μ` on `[0, 1]` that either has a bounded density or
/// is supported in some `[a, b] ⊂ (0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralMeasure {
    /// Unit mass at `p`; Value-at-Risk at level `1 - p`.
    PointMass { p: f64 },
    /// Density `1/u` on `[1-u, 1]`; Average Value-at-Risk at level `u`.
    TailUniform { u: f64 },
    /// Bounded piecewise-constant density.
    BoundedDensity(PiecewiseDensity),
    /// Piecewise-constant density supported in `[a, b]` with `0 < a < b < 1`.
    CompactSupport(PiecewiseDensity),
}

impl SpectralMeasure {
    pub fn value_at_risk(u: f64) -> Result<Self> {
        check_level("u", u)?;
        Ok(Self::PointMass { p: 1.0 - u })
    }

    pub fn average_value_at_risk(u: f64) -> Result<Self> {
        check_level("u", u)?;
        Ok(Self::TailUniform { u })
    }

    pub fn compact_support(density: PiecewiseDensity) -> Result<Self> {
        let m = Self::CompactSupport(density);
        m.validate()?;
        Ok(m)
    }

    /// Lebesgue measure on `[0, 1]`; integrates the quantile function to the mean.
    pub fn lebesgue() -> Self {
        Self::BoundedDensity(PiecewiseDensity::uniform(0.0, 1.0).expect("unit interval"))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PointMass { p } => check_level("p", *p),
            Self::TailUniform { u } => check_level("u", *u),
            Self::BoundedDensity(_) => Ok(()),
            Self::CompactSupport(d) => {
                let (a, b) = d.support();
                if a > 0.0 && b < 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "compact support [{a}, {b}] must lie strictly inside (0, 1)"
                    )))
                }
            }
        }
    }

    /// `μ((lo, hi])` for `0 <= lo <= hi <= 1`.
    pub(crate) fn mass(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Self::PointMass { p } => {
                if lo < *p && *p <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            Self::TailUniform { u } => {
                let start = 1.0 - u;
                let overlap = hi.min(1.0) - lo.max(start);
                if overlap > 0.0 {
                    overlap / u
                } else {
                    0.0
                }
            }
            Self::BoundedDensity(d) | Self::CompactSupport(d) => d.cdf(hi) - d.cdf(lo),
        }
    }

    /// Density at `p`, or `None` for a point mass.
    pub fn density_at(&self, p: f64) -> Option<f64> {
        match self {
            Self::PointMass { .. } => None,
            Self::TailUniform { u } => Some(if p >= 1.0 - u && p <= 1.0 { 1.0 / u } else { 0.0 }),
            Self::BoundedDensity(d) | Self::CompactSupport(d) => Some(d.density_at(p)),
        }
    }

    /// Constant `c` with `|∫ F⁻¹_W dμ| <= c E|W|` for every integrable `W`:
    /// `max(1/a, 1/(1-b))` for support in `[a, b]`, the density bound otherwise.
    pub fn bound_constant(&self) -> f64 {
        match self {
            Self::PointMass { p } => (1.0 / p).max(1.0 / (1.0 - p)),
            Self::TailUniform { u } => 1.0 / u,
            Self::BoundedDensity(d) => d.max_level(),
            Self::CompactSupport(d) => {
                let (a, b) = d.support();
                (1.0 / a).max(1.0 / (1.0 - b))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(values: &[f64], weights: &[f64]) -> WeightedSample {
        WeightedSample::new(values.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn quantile_generalized_inverse() {
        let s = sample(&[1.0, 2.0, 3.0], &[0.2, 0.3, 0.5]);
        assert_eq!(s.quantile(0.5).unwrap(), 2.0);
        assert_eq!(s.quantile(0.51).unwrap(), 3.0);
        assert_eq!(s.quantile(0.2).unwrap(), 1.0);
        assert_eq!(s.quantile(1e-9).unwrap(), 1.0);
        let single = sample(&[5.0], &[1.0]);
        for p in [0.01, 0.5, 0.99] {
            assert_eq!(single.quantile(p).unwrap(), 5.0);
        }
    }

    #[test]
    fn quantile_rejects_levels_outside_unit_interval() {
        let s = sample(&[1.0, 2.0], &[0.5, 0.5]);
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(s.quantile(p), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn ties_are_merged() {
        let s = sample(&[2.0, 1.0, 2.0, 3.0], &[0.1, 0.2, 0.2, 0.5]);
        assert_eq!(s.atoms(), &[1.0, 2.0, 3.0]);
        assert!((s.cumulative()[1] - 0.5).abs() < 1e-15);
        assert_eq!(s.quantile(0.5).unwrap(), 2.0);
    }

    #[test]
    fn weight_normalization_policy() {
        let s = WeightedSample::new(vec![1.0, 2.0], vec![0.5, 0.5 + 5e-7]).unwrap();
        let total: f64 = s.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(WeightedSample::new(vec![1.0, 2.0], vec![0.5, 0.51]).is_err());
        assert!(WeightedSample::new(vec![1.0, 2.0], vec![-0.5, 1.5]).is_err());
        assert!(WeightedSample::new(vec![], vec![]).is_err());
        assert!(WeightedSample::new(vec![1.0], vec![0.5, 0.5]).is_err());
        let raw = WeightedSample::from_unnormalized(vec![1.0, 2.0], vec![3.0, 1.0]).unwrap();
        assert_eq!(raw.quantile(0.75).unwrap(), 1.0);
    }

    #[test]
    fn spectral_risk_examples() {
        let s = sample(&[-1.0, 1.0], &[0.5, 0.5]);
        let r = s.spectral_risk(&SpectralMeasure::PointMass { p: 0.75 }).unwrap();
        assert_eq!(r, 1.0);

        let c = 3.25;
        let constant = sample(&[c, c], &[0.5, 0.5]);
        for mu in measures() {
            assert!((constant.spectral_risk(&mu).unwrap() + c).abs() < 1e-12);
        }

        let s = WeightedSample::uniform(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = s.spectral_risk(&SpectralMeasure::TailUniform { u: 0.25 }).unwrap();
        assert_eq!(r, 0.0);
        let riemann = riemann_spectral(&s, &SpectralMeasure::TailUniform { u: 0.25 }, 1_000_000);
        assert!(riemann.abs() < 1e-6);
    }

    #[test]
    fn var_and_avar_of_constant() {
        let s = WeightedSample::point(2.5);
        assert_eq!(s.var_at_level(0.01).unwrap(), -2.5);
        assert!((s.avar_at_level(0.01).unwrap() + 2.5).abs() < 1e-12);
        assert!(s.var_at_level(1.0).is_err());
    }

    #[test]
    fn var_avar_of_standard_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = WeightedSample::uniform(draws).unwrap();
        // Φ⁻¹(0.995) and φ(Φ⁻¹(0.99))/0.01, 40-digit references.
        assert!((s.var_at_level(0.005).unwrap() - 2.575_829_303_548_901).abs() < 0.02);
        assert!((s.avar_at_level(0.01).unwrap() - 2.665_214_220_345_805).abs() < 0.02);
    }

    #[test]
    fn density_validation() {
        assert!(PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![1.0]).is_err());
        assert!(PiecewiseDensity::new(vec![0.0, 0.5, 0.4], vec![1.0, 1.0]).is_err());
        assert!(PiecewiseDensity::new(vec![0.0, 1.0], vec![2.0]).is_err());
        assert!(PiecewiseDensity::new(vec![-0.1, 1.0], vec![1.0 / 1.1]).is_err());
        let d = PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5]).unwrap();
        assert_eq!(d.max_level(), 1.5);
        assert!(SpectralMeasure::compact_support(PiecewiseDensity::uniform(0.0, 0.5).unwrap()).is_err());
        assert!(SpectralMeasure::compact_support(PiecewiseDensity::uniform(0.2, 0.9).unwrap()).is_ok());
    }

    #[test]
    fn measure_masses_sum_to_one() {
        for mu in measures() {
            let grid: Vec<f64> = (0..=37).map(|i| i as f64 / 37.0).collect();
            let total: f64 = grid.windows(2).map(|w| mu.mass(w[0], w[1])).sum();
            assert!((total - 1.0).abs() < 1e-12, "{mu:?}");
        }
    }

    fn measures() -> Vec<SpectralMeasure> {
        vec![
            SpectralMeasure::PointMass { p: 0.75 },
            SpectralMeasure::PointMass { p: 0.995 },
            SpectralMeasure::TailUniform { u: 0.1 },
            SpectralMeasure::lebesgue(),
            SpectralMeasure::BoundedDensity(
                PiecewiseDensity::new(vec![0.0, 0.3, 0.8, 1.0], vec![0.5, 1.1, 1.5]).unwrap(),
            ),
            SpectralMeasure::CompactSupport(
                PiecewiseDensity::new(vec![0.1, 0.5, 0.95], vec![1.0, 1.3333333333333333]).unwrap(),
            ),
        ]
    }

    /// Brute-force quantile of `-Y` straight from the definition.
    fn brute_neg_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
        let mut best = f64::INFINITY;
        for &m in values.iter().map(|v| -v).collect::<Vec<_>>().iter() {
            let f: f64 = values
                .iter()
                .zip(weights)
                .filter(|(v, _)| -**v <= m)
                .map(|(_, w)| w)
                .sum();
            if f >= p - 1e-12 && m < best {
                best = m;
            }
        }
        best
    }

    fn riemann_spectral(s: &WeightedSample, mu: &SpectralMeasure, nodes: usize) -> f64 {
        let h = 1.0 / nodes as f64;
        (0..nodes)
            .map(|i| {
                let p = (i as f64 + 0.5) * h;
                let dens = mu.density_at(p).unwrap();
                if dens == 0.0 {
                    0.0
                } else {
                    brute_neg_quantile(s.values(), s.weights(), p) * dens * h
                }
            })
            .sum()
    }

    #[test]
    fn exact_integral_matches_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let n = rng.random_range(1..5);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s = WeightedSample::from_unnormalized(values, raw).unwrap();
            for mu in measures().iter().filter(|m| m.density_at(0.5).is_some()) {
                let exact = s.spectral_risk(mu).unwrap();
                let approx = riemann_spectral(&s, mu, 1_000_000);
                assert!((exact - approx).abs() < 1e-6, "{mu:?}: {exact} vs {approx}");
            }
        }
    }

    fn arb_sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-50.0f64..50.0, n),
                prop::collection::vec(0.01f64..1.0, n),
            )
        })
    }

    fn arb_measure() -> impl Strategy<Value = SpectralMeasure> {
        prop_oneof![
            (0.01f64..0.99).prop_map(|p| SpectralMeasure::PointMass { p }),
            (0.01f64..0.99).prop_map(|u| SpectralMeasure::TailUniform { u }),
            (0.05f64..0.45, 0.55f64..0.95, 0.2f64..3.0).prop_map(|(a, b, r)| {
                let mid = 0.5 * (a + b);
                let levels = [1.0, r];
                let mass = (mid - a) + (b - mid) * r;
                let levels = levels.iter().map(|l| l / mass).collect();
                SpectralMeasure::CompactSupport(PiecewiseDensity::new(vec![a, mid, b], levels).unwrap())
            }),
            (0.1f64..0.9, 0.2f64..3.0).prop_map(|(cut, r)| {
                let mass = cut + (1.0 - cut) * r;
                SpectralMeasure::BoundedDensity(
                    PiecewiseDensity::new(vec![0.0, cut, 1.0], vec![1.0 / mass, r / mass]).unwrap(),
                )
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn quantile_monotone_in_level((v, w) in arb_sample(), p1 in 0.001f64..0.999, p2 in 0.001f64..0.999) {
            let s = WeightedSample::from_unnormalized(v, w).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(s.quantile(lo).unwrap() <= s.quantile(hi).unwrap());
        }

        #[test]
        fn translation_and_scale((v, w) in arb_sample(), mu in arb_measure(), a in 0.0f64..5.0, b in -20.0f64..20.0) {
            let s = WeightedSample::from_unnormalized(v, w).unwrap();
            let lhs = s.affine(a, b).spectral_risk(&mu).unwrap();
            let rhs = a * s.spectral_risk(&mu).unwrap() - b;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn monotone_in_position((v, w) in arb_sample(), mu in arb_measure(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bumped: Vec<f64> = v.iter().map(|x| x + rng.random_range(0.0..3.0)).collect();
            let base = WeightedSample::from_unnormalized(v, w.clone()).unwrap();
            let better = WeightedSample::from_unnormalized(bumped, w).unwrap();
            prop_assert!(better.spectral_risk(&mu).unwrap() <= base.spectral_risk(&mu).unwrap() + 1e-12);
        }

        #[test]
        fn quantile_integral_bound((v, w) in arb_sample(), mu in arb_measure()) {
            let s = WeightedSample::from_unnormalized(v, w).unwrap();
            let lhs = s.quantile_integral(&mu).unwrap().abs();
            prop_assert!(lhs <= mu.bound_constant() * s.abs_mean() * (1.0 + 1e-12) + 1e-12);
        }
    }
}
