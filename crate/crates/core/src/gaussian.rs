//! Gaussian cashflow models and the closed-form limit value.
//!
//! Coordinates are time-blocked, `(x_1, y_1.., x_2, y_2.., ..)`, so the
//! information available at time `t` is always a contiguous prefix.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mappings::ValuationSchedule;
use crate::tree::{self, BranchSampler, ScenarioTree};

/// Eigenvalues below this fraction of the largest are treated as zero.
const PINV_REL_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues and conditional variances down to this (relative to
/// the model scale) are roundoff and clamp to zero.
const PSD_TOL: f64 = 1e-8;
/// Conditional variances and decrements below this fraction of `Var(Σ X)` are
/// roundoff from rank-deficient blocks; they are set to zero because `√ΔVar`
/// would magnify them.
const DELTA_REL_TOL: f64 = 1e-10;
const FORMAT_HEADER: &str = "# mpval gaussian model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    horizon: usize,
    aux_dim: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Nonrandom decrements of the conditional variance of the aggregate cashflow.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    /// `ΔVar_t` for `t = 1..=T`.
    pub deltas: Vec<f64>,
    /// `Var(Σ_t X_t)`.
    pub total: f64,
    /// `Var(Σ_t X_t | Z_{<=t})` for `t = 0..=T`.
    pub conditional: Vec<f64>,
}

impl VarianceSchedule {
    /// Deltas divided by the total variance; all zero for a deterministic cashflow.
    pub fn normalized(&self) -> Vec<f64> {
        if self.total > 0.0 {
            self.deltas.iter().map(|d| d / self.total).collect()
        } else {
            vec![0.0; self.deltas.len()]
        }
    }

    /// Nonincreasing deltas, i.e. `t ↦ Var(Σ X | Z_{<=t})` is convex.
    pub fn is_convex(&self, tol: f64) -> bool {
        self.deltas.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

impl GaussianModel {
    /// Model with the given mean and row-major covariance.
    pub fn new(horizon: usize, aux_dim: usize, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let n = horizon * (1 + aux_dim);
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if mean.len() != n {
            return Err(Error::Dimension {
                what: "mean",
                expected: n,
                got: mean.len(),
            });
        }
        if cov.len() != n * n {
            return Err(Error::Dimension {
                what: "covariance entries",
                expected: n * n,
                got: cov.len(),
            });
        }
        Self::from_parts(
            horizon,
            aux_dim,
            DVector::from_vec(mean),
            DMatrix::from_row_slice(n, n, &cov),
        )
    }

    pub fn from_parts(horizon: usize, aux_dim: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = horizon * (1 + aux_dim);
        if horizon == 0 || mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension {
                what: "gaussian model",
                expected: n,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model has non-finite entries"));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = cov.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if min < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!(
                "covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        Ok(Self {
            horizon,
            aux_dim,
            mean,
            cov,
        })
    }

    /// `T` iid `N(0, 1)` cashflows and no auxiliary information.
    pub fn iid_standard(horizon: usize) -> Result<Self> {
        Self::from_parts(horizon, 0, DVector::zeros(horizon), DMatrix::identity(horizon, horizon))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    /// Coordinates per period.
    pub fn block(&self) -> usize {
        1 + self.aux_dim
    }

    pub fn dim(&self) -> usize {
        self.horizon * self.block()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Index of `x_t`, `t` in `1..=T`.
    pub fn x_index(&self, t: usize) -> usize {
        (t - 1) * self.block()
    }

    /// Coordinates observed by time `t`.
    pub fn prefix(&self, t: usize) -> Vec<usize> {
        (0..t * self.block()).collect()
    }

    /// Coefficients of `Σ_t X_t`.
    pub fn sum_coeffs(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for t in 1..=self.horizon {
            c[self.x_index(t)] = 1.0;
        }
        c
    }

    /// `E[Σ_t X_t]`.
    pub fn expected_total(&self) -> f64 {
        (1..=self.horizon).map(|t| self.mean[self.x_index(t)]).sum()
    }

    /// Mean and covariance of `(X_1, .., X_T)`.
    pub fn x_marginal(&self) -> (DVector<f64>, DMatrix<f64>) {
        let idx: Vec<usize> = (1..=self.horizon).map(|t| self.x_index(t)).collect();
        (
            self.mean.select_rows(&idx),
            self.cov.select_rows(&idx).select_columns(&idx),
        )
    }

    fn scale(&self) -> f64 {
        self.cov.diagonal().amax().max(1.0)
    }

    /// `Var(cᵀZ | Z_i, i ∈ cond)`, which does not depend on the realized values.
    pub fn conditional_variance(&self, coeffs: &[f64], cond: &[usize]) -> Result<f64> {
        if coeffs.len() != self.dim() {
            return Err(Error::Dimension {
                what: "target coefficients",
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        if let Some(&bad) = cond.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::invalid(format!("conditioning index {bad} out of range")));
        }
        let c = DVector::from_column_slice(coeffs);
        let sigma_c = &self.cov * &c;
        let total = c.dot(&sigma_c);
        if cond.is_empty() {
            return Ok(total.max(0.0));
        }
        let cross = sigma_c.select_rows(cond);
        let block = self.cov.select_rows(cond).select_columns(cond);
        let explained = pinv_quadratic_form(block, &cross)?;
        self.clamp_variance(total - explained, "conditional variance")
    }

    fn clamp_variance(&self, v: f64, what: &str) -> Result<f64> {
        if v >= 0.0 {
            return Ok(v);
        }
        let tol = PSD_TOL * self.scale();
        if v >= -tol {
            if v < -1e-14 * self.scale() {
                tracing::warn!(value = v, "{what} slightly negative, clamped to zero");
            }
            Ok(0.0)
        } else {
            Err(Error::numerical(format!("{what} is negative ({v:e})")))
        }
    }

    /// Conditional variances of `Σ X` given each time prefix, and their decrements.
    pub fn variance_schedule(&self) -> Result<VarianceSchedule> {
        let s = self.sum_coeffs();
        let mut conditional = (0..=self.horizon)
            .map(|t| self.conditional_variance(&s, &self.prefix(t)))
            .collect::<Result<Vec<f64>>>()?;
        let tol = PSD_TOL * self.scale();
        let floor = DELTA_REL_TOL * conditional[0];
        for v in &mut conditional[1..] {
            if *v <= floor {
                *v = 0.0;
            }
        }
        let mut deltas = Vec::with_capacity(self.horizon);
        for w in conditional.windows(2) {
            let d = w[0] - w[1];
            if d < -tol {
                return Err(Error::numerical(format!(
                    "variance increased after conditioning ({d:e})"
                )));
            }
            deltas.push(if d <= floor { 0.0 } else { d });
        }
        Ok(VarianceSchedule {
            deltas,
            total: conditional[0],
            conditional,
        })
    }

    /// `Var(E[Σ X | Z_{<=u}] | Z_{<=u-1})` for `u = 1..=T`, computed from the
    /// regression coefficients of the conditional mean. Equals the variance
    /// decrements, which makes it an independent check of
    /// [`variance_schedule`](Self::variance_schedule).
    pub fn innovation_variances(&self) -> Result<Vec<f64>> {
        let s = DVector::from_vec(self.sum_coeffs());
        let cov_s = &self.cov * &s;
        (1..=self.horizon)
            .map(|u| {
                let obs = self.prefix(u);
                let block = self.cov.select_rows(&obs).select_columns(&obs);
                let beta = pinv(block)? * cov_s.select_rows(&obs);
                let mut coeffs = vec![0.0; self.dim()];
                coeffs[..obs.len()].copy_from_slice(beta.as_slice());
                self.conditional_variance(&coeffs, &self.prefix(u - 1))
            })
            .collect()
    }

    /// Closed-form `V_0 = E[Σ X_t] + Σ_t φ_{t-1}(ε) √ΔVar_t`.
    pub fn limit_value(&self, schedule: &ValuationSchedule) -> Result<f64> {
        schedule.check_horizon(self.horizon)?;
        let vs = self.variance_schedule()?;
        Ok(self.expected_total()
            + vs.deltas
                .iter()
                .enumerate()
                .map(|(t, d)| schedule.at(t).of_standard_normal() * d.sqrt())
                .sum::<f64>())
    }

    /// Conditional mean and covariance of `(x_{t+1}, y_{t+1})` given the
    /// realized history `(x, y)_{<=t}` in time-blocked order.
    pub fn conditional_law(&self, history: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let k = self.block();
        if !history.len().is_multiple_of(k) || history.len() / k >= self.horizon {
            return Err(Error::invalid(format!(
                "history of length {} is not a prefix of a {}-period model",
                history.len(),
                self.horizon
            )));
        }
        let law = LevelLaw::new(self, history.len() / k)?;
        Ok((law.mean(history), law.cov))
    }

    /// Model of `(aX + b, Y)`.
    pub fn affine(&self, a: f64, b: &[f64]) -> Result<Self> {
        if b.len() != self.horizon {
            return Err(Error::Dimension {
                what: "affine shift",
                expected: self.horizon,
                got: b.len(),
            });
        }
        if !a.is_finite() {
            return Err(Error::Domain {
                name: "a",
                value: a,
                expected: "finite",
            });
        }
        let mut scale = DVector::from_element(self.dim(), 1.0);
        let mut mean = self.mean.clone();
        for t in 1..=self.horizon {
            let i = self.x_index(t);
            scale[i] = a;
            mean[i] = a * mean[i] + b[t - 1];
        }
        let d = DMatrix::from_diagonal(&scale);
        Self::from_parts(self.horizon, self.aux_dim, mean, &d * &self.cov * &d)
    }

    /// Model keeping only the listed auxiliary coordinates (0-based within a period).
    pub fn restrict_aux(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&bad) = keep.iter().find(|&&j| j >= self.aux_dim) {
            return Err(Error::invalid(format!("auxiliary index {bad} out of range")));
        }
        let idx: Vec<usize> = (1..=self.horizon)
            .flat_map(|t| {
                let x = self.x_index(t);
                std::iter::once(x).chain(keep.iter().map(move |j| x + 1 + j))
            })
            .collect();
        Self::from_parts(
            self.horizon,
            keep.len(),
            self.mean.select_rows(&idx),
            self.cov.select_rows(&idx).select_columns(&idx),
        )
    }

    /// Writes the text format: a header line, `T d`, the mean row, then one row per covariance row.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{FORMAT_HEADER}")?;
        writeln!(out, "{} {}", self.horizon, self.aux_dim)?;
        let row = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "{}", row(&mut self.mean.iter()))?;
        for r in self.cov.row_iter() {
            writeln!(out, "{}", row(&mut r.iter()))?;
        }
        Ok(())
    }

    /// Reads the text format; `#` starts a comment, fields split on whitespace or commas.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields = content
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: n + 1,
                        msg: format!("cannot parse {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((n + 1, fields));
        }
        let Some((line, dims)) = rows.first() else {
            return Err(Error::Parse {
                line: 0,
                msg: "empty model file".into(),
            });
        };
        let [t, d] = dims[..] else {
            return Err(Error::Parse {
                line: *line,
                msg: "expected `T d`".into(),
            });
        };
        if t < 1.0 || d < 0.0 || t.fract() != 0.0 || d.fract() != 0.0 {
            return Err(Error::Parse {
                line: *line,
                msg: "T and d must be nonnegative integers, T >= 1".into(),
            });
        }
        let (horizon, aux_dim) = (t as usize, d as usize);
        let n = horizon * (1 + aux_dim);
        if rows.len() != n + 2 {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected 1 mean row and {n} covariance rows"),
            });
        }
        for (line, r) in &rows[1..] {
            if r.len() != n {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("expected {n} fields, got {}", r.len()),
                });
            }
        }
        let mean = rows[1].1.clone();
        let cov = rows[2..].iter().flat_map(|(_, r)| r.iter().copied()).collect();
        Self::new(horizon, aux_dim, mean, cov)
    }
}

/// `crossᵀ A⁺ cross` for a symmetric PSD block `A`.
fn pinv_quadratic_form(block: DMatrix<f64>, cross: &DVector<f64>) -> Result<f64> {
    let eig = checked_eigen(block)?;
    let cut = cutoff(&eig);
    let proj = eig.eigenvectors.transpose() * cross;
    Ok(eig
        .eigenvalues
        .iter()
        .zip(proj.iter())
        .filter(|(l, _)| **l > cut)
        .map(|(l, p)| p * p / l)
        .sum())
}

fn pinv(block: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = checked_eigen(block)?;
    let cut = cutoff(&eig);
    let inv = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

fn checked_eigen(block: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(block);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
        return Err(Error::numerical(format!(
            "conditioning block is not PSD (eigenvalue {min:e})"
        )));
    }
    Ok(eig)
}

fn cutoff(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> f64 {
    PINV_REL_TOL * eig.eigenvalues.max().max(0.0)
}

/// Exact one-step conditional law at a fixed depth: the mean is affine in the
/// history and the covariance does not depend on it.
#[derive(Debug, Clone)]
struct LevelLaw {
    mean_next: DVector<f64>,
    mean_hist: DVector<f64>,
    gain: DMatrix<f64>,
    cov: DMatrix<f64>,
    /// `cov = factor factorᵀ`.
    factor: DMatrix<f64>,
}

impl LevelLaw {
    fn new(model: &GaussianModel, t: usize) -> Result<Self> {
        let k = model.block();
        let hist: Vec<usize> = (0..t * k).collect();
        let next: Vec<usize> = (t * k..(t + 1) * k).collect();
        let s_nn = model.cov.select_rows(&next).select_columns(&next);
        let (gain, cov) = if hist.is_empty() {
            (DMatrix::zeros(k, 0), s_nn)
        } else {
            let s_nh = model.cov.select_rows(&next).select_columns(&hist);
            let s_hh = model.cov.select_rows(&hist).select_columns(&hist);
            let gain = &s_nh * pinv(s_hh)?;
            let cov = &s_nn - &gain * s_nh.transpose();
            (gain, (&cov + cov.transpose()) * 0.5)
        };
        let eig = SymmetricEigen::new(cov.clone());
        for &l in eig.eigenvalues.iter() {
            model.clamp_variance(l, "conditional covariance eigenvalue")?;
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            mean_next: model.mean.select_rows(&next),
            mean_hist: model.mean.select_rows(&hist),
            gain,
            cov,
            factor,
        })
    }

    fn mean(&self, history: &[f64]) -> DVector<f64> {
        if history.is_empty() {
            return self.mean_next.clone();
        }
        let h = DVector::from_column_slice(history) - &self.mean_hist;
        &self.mean_next + &self.gain * h
    }
}

/// Draws children from the exact conditional Gaussian law.
pub struct GaussianSampler {
    horizon: usize,
    aux_dim: usize,
    levels: Vec<LevelLaw>,
}

impl GaussianSampler {
    pub fn new(model: &GaussianModel) -> Result<Self> {
        let levels = (0..model.horizon)
            .map(|t| LevelLaw::new(model, t))
            .collect::<Result<_>>()?;
        Ok(Self {
            horizon: model.horizon,
            aux_dim: model.aux_dim,
            levels,
        })
    }
}

impl BranchSampler for GaussianSampler {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    fn sample_children(&self, xs: &[f64], ys: &[f64], rng: &mut ChaCha8Rng, x_out: &mut [f64], y_out: &mut [f64]) {
        let d = self.aux_dim;
        let k = 1 + d;
        let t = xs.len();
        let mut history = Vec::with_capacity(t * k);
        for s in 0..t {
            history.push(xs[s]);
            history.extend_from_slice(&ys[s * d..(s + 1) * d]);
        }
        let law = &self.levels[t];
        let mean = law.mean(&history);
        let mut xi = DVector::zeros(k);
        for (c, x) in x_out.iter_mut().enumerate() {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let z = &mean + &law.factor * &xi;
            *x = z[0];
            y_out[c * d..(c + 1) * d].copy_from_slice(&z.as_slice()[1..]);
        }
    }
}

/// Nested-simulation tree with `branching[t]` children per depth-`t` node.
pub fn build_tree(model: &GaussianModel, branching: &[usize], seed: u64) -> Result<ScenarioTree> {
    let sampler = GaussianSampler::new(model)?;
    tree::sample_tree(&sampler, branching, seed)
}
