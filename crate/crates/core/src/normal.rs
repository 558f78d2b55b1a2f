//! Standard normal helpers and the quadrature used for closed forms.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::function::erf;

use crate::dist::SpectralMeasure;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`; infinite at 0 and 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// `φ(Φ⁻¹(p))`, zero at the endpoints. Its derivative in `p` is `-Φ⁻¹(p)`.
fn density_at_quantile(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        pdf(quantile(p))
    }
}

/// `∫ Φ⁻¹(p) μ(dp)` in closed form.
///
/// On an interval of constant density `w`, `∫ Φ⁻¹(p) w dp = w (φ(Φ⁻¹(lo)) - φ(Φ⁻¹(hi)))`.
pub fn quantile_integral(mu: &SpectralMeasure) -> f64 {
    match mu {
        SpectralMeasure::PointMass { p } => quantile(*p),
        SpectralMeasure::TailUniform { u } => density_at_quantile(1.0 - u) / u,
        SpectralMeasure::BoundedDensity(d) | SpectralMeasure::CompactSupport(d) => d
            .breakpoints()
            .windows(2)
            .zip(d.levels())
            .map(|(w, l)| l * (density_at_quantile(w[0]) - density_at_quantile(w[1])))
            .sum(),
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            deriv = dp;
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        if dp != 0.0 {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gl16();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let panel: f64 = nodes.iter().zip(weights).map(|(x, w)| w * f(mid + half * x)).sum();
        total += half * panel;
    }
    total
}
