//! Information ordering of closed-form values.
//!
//! With a time-constant mapping the Gaussian limit value is
//! `E[Σ X] + φ(ε) √Var(Σ X) Σ_t √c_t` where `c` are the normalized variance
//! decrements. A finer filtration front-loads the decrements, and when `c` is
//! nonincreasing that can only lower `Σ √c_t`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::mappings::{OneStepMapping, ValuationSchedule};

const SIMPLEX_TOL: f64 = 1e-12;
const MARGINAL_TOL: f64 = 1e-10;
const MAX_GRID_HORIZON: usize = 5;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaProfile {
    c: Vec<f64>,
}

impl DeltaProfile {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::invalid("profile must be non-empty"));
        }
        if let Some(&v) = c.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain {
                name: "c",
                value: v,
                expected: "c_t >= 0",
            });
        }
        let total: f64 = c.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain {
                name: "sum of c",
                value: total,
                expected: "sum to 1",
            });
        }
        Ok(Self { c })
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.c.windows(2).all(|w| w[1] <= w[0] + SIMPLEX_TOL)
    }

    /// `Σ_t √c_t`.
    pub fn objective(&self) -> f64 {
        objective(&self.c)
    }
}

fn objective(c: &[f64]) -> f64 {
    c.iter().map(|v| v.sqrt()).sum()
}

fn prefix_dominates(d: &[f64], c: &[f64]) -> bool {
    let (mut sd, mut sc) = (0.0, 0.0);
    d.iter().zip(c).all(|(d, c)| {
        sd += d;
        sc += c;
        sd >= sc - SIMPLEX_TOL
    })
}

/// Whether every prefix sum of `d` dominates the corresponding prefix sum of `c`.
pub fn is_majorized_feasible(d: &DeltaProfile, c: &DeltaProfile) -> Result<bool> {
    if d.len() != c.len() {
        return Err(Error::Dimension {
            what: "profile",
            expected: c.len(),
            got: d.len(),
        });
    }
    Ok(prefix_dominates(&d.c, &c.c))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub c: Vec<f64>,
    pub step: f64,
    pub objective_c: f64,
    pub max_found: f64,
    pub argmax: Vec<f64>,
    pub c_is_max: bool,
    /// False when `c` is not nonincreasing; the check still runs.
    pub hypothesis_holds: bool,
    pub grid_points: u64,
    pub feasible_points: u64,
}

/// Maximizes `Σ √d_t` over the grid points of the simplex whose prefix sums
/// dominate those of `c`, and reports whether `c` itself attains the maximum.
pub fn lemma_check(c: &DeltaProfile, step: f64) -> Result<LemmaReport> {
    let horizon = c.len();
    if horizon > MAX_GRID_HORIZON {
        return Err(Error::invalid(format!(
            "grid enumeration supports T <= {MAX_GRID_HORIZON}"
        )));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Domain {
            name: "step",
            value: step,
            expected: "0 < step <= 1",
        });
    }
    let k = (1.0 / step).round();
    if (k * step - 1.0).abs() > 1e-9 {
        return Err(Error::Domain {
            name: "step",
            value: step,
            expected: "1/step is an integer",
        });
    }
    let k = k as u32;
    let prefix_c: Vec<f64> =
        c.c.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();

    // One task per leading coordinate; results are combined in index order.
    let partial: Vec<Best> = (0..=k)
        .into_par_iter()
        .map(|first| {
            let mut best = Best::default();
            let mut parts = vec![0u32; horizon];
            parts[0] = first;
            enumerate(&mut parts, 1, k - first, k, &prefix_c, &mut best);
            best
        })
        .collect();
    let best = partial.into_iter().fold(Best::default(), Best::merge);
    let objective_c = c.objective();
    Ok(LemmaReport {
        c: c.c.clone(),
        step,
        objective_c,
        max_found: best.value,
        argmax: best.argmax.iter().map(|&p| p as f64 / k as f64).collect(),
        c_is_max: objective_c >= best.value - 1e-12,
        hypothesis_holds: c.is_nonincreasing(),
        grid_points: best.points,
        feasible_points: best.feasible,
    })
}

#[derive(Debug, Clone)]
struct Best {
    value: f64,
    argmax: Vec<u32>,
    points: u64,
    feasible: u64,
}

impl Default for Best {
    fn default() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            argmax: Vec::new(),
            points: 0,
            feasible: 0,
        }
    }
}

impl Best {
    /// Keeps the earlier argmax on ties.
    fn merge(self, other: Best) -> Best {
        let (value, argmax) = if other.value > self.value {
            (other.value, other.argmax)
        } else {
            (self.value, self.argmax)
        };
        Best {
            value,
            argmax,
            points: self.points + other.points,
            feasible: self.feasible + other.feasible,
        }
    }
}

fn enumerate(parts: &mut [u32], pos: usize, remaining: u32, k: u32, prefix_c: &[f64], best: &mut Best) {
    if pos == parts.len() {
        if remaining != 0 {
            return;
        }
        best.points += 1;
        let mut acc = 0;
        for (p, c) in parts.iter().zip(prefix_c) {
            acc += p;
            if (acc as f64) / (k as f64) < c - SIMPLEX_TOL {
                return;
            }
        }
        best.feasible += 1;
        let value: f64 = parts.iter().map(|&p| (p as f64 / k as f64).sqrt()).sum();
        if value > best.value {
            best.value = value;
            best.argmax = parts.to_vec();
        }
        return;
    }
    if pos == parts.len() - 1 {
        parts[pos] = remaining;
        enumerate(parts, pos + 1, 0, k, prefix_c, best);
        return;
    }
    for p in 0..=remaining {
        parts[pos] = p;
        enumerate(parts, pos + 1, remaining - p, k, prefix_c, best);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiltrationReport {
    pub v0_f: f64,
    pub v0_g: f64,
    pub deltas_f: Vec<f64>,
    pub deltas_g: Vec<f64>,
    /// `φ(ε)` of the common mapping; the ordering argument needs it `>= 0`.
    pub phi_eps: f64,
    /// `t ↦ Var(Σ X | F_t)` is convex, i.e. F's decrements are nonincreasing.
    pub convexity_holds: bool,
    /// G's normalized decrements dominate F's in every prefix sum, the
    /// variance-level consequence of `F_t ⊆ G_t`.
    pub prefix_domination: bool,
    pub ordering_holds: bool,
}

/// Compares closed-form values of the same cashflow under a coarser
/// filtration (model F) and a finer one (model G) with a time-constant mapping.
pub fn compare_filtrations(
    model_f: &GaussianModel,
    model_g: &GaussianModel,
    mapping: &OneStepMapping,
) -> Result<FiltrationReport> {
    if model_f.horizon() != model_g.horizon() {
        return Err(Error::Dimension {
            what: "horizon",
            expected: model_f.horizon(),
            got: model_g.horizon(),
        });
    }
    let (mf, cf) = model_f.x_marginal();
    let (mg, cg) = model_g.x_marginal();
    let scale = cf.amax().max(1.0);
    if (mf - mg).amax() > MARGINAL_TOL * scale || (cf - cg).amax() > MARGINAL_TOL * scale {
        return Err(Error::invalid("models do not share the same cashflow marginal"));
    }
    let schedule = ValuationSchedule::constant(mapping.clone(), model_f.horizon())?;
    let vf = model_f.variance_schedule()?;
    let vg = model_g.variance_schedule()?;
    let v0_f = model_f.limit_value(&schedule)?;
    let v0_g = model_g.limit_value(&schedule)?;
    Ok(FiltrationReport {
        v0_f,
        v0_g,
        convexity_holds: vf.is_convex(SIMPLEX_TOL * vf.total.max(1.0)),
        prefix_domination: prefix_dominates(&vg.normalized(), &vf.normalized()),
        phi_eps: mapping.of_standard_normal(),
        ordering_holds: v0_f >= v0_g - 1e-10,
        deltas_f: vf.deltas,
        deltas_g: vg.deltas,
    })
}
