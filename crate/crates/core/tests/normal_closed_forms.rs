//! Closed-form standard normal values against a large Monte Carlo sample.

use mpval::dist::PiecewiseDensity;
use mpval::{rng, OneStepMapping, SpectralMeasure, WeightedSample};
use rand::Rng;
use rand_distr::StandardNormal;

const DRAWS: usize = 10_000_000;
const BATCHES: usize = 20;

fn variants() -> Vec<OneStepMapping> {
    let band = SpectralMeasure::CompactSupport(PiecewiseDensity::uniform(0.6, 0.95).unwrap());
    vec![
        OneStepMapping::cost_of_capital(0.06, SpectralMeasure::PointMass { p: 0.995 }).unwrap(),
        OneStepMapping::cost_of_capital(0.06, SpectralMeasure::TailUniform { u: 0.01 }).unwrap(),
        OneStepMapping::coc_ll(0.06, SpectralMeasure::PointMass { p: 0.995 }).unwrap(),
        OneStepMapping::power_utility(0.5, SpectralMeasure::TailUniform { u: 0.2 }).unwrap(),
        OneStepMapping::limited_liability(0.4, 0.8, band.clone()).unwrap(),
        OneStepMapping::mean_std(1.5).unwrap(),
        OneStepMapping::quantile_mixture(0.7, SpectralMeasure::lebesgue(), band).unwrap(),
    ]
}

#[test]
fn closed_forms_match_ten_million_draws() {
    let mut stream = rng::stream(rng::root_key(2024));
    let draws: Vec<f64> = (0..DRAWS).map(|_| stream.sample(StandardNormal)).collect();
    let full = WeightedSample::uniform(draws.clone()).unwrap();
    let batches: Vec<WeightedSample> = draws
        .chunks(DRAWS / BATCHES)
        .map(|c| WeightedSample::uniform(c.to_vec()).unwrap())
        .collect();
    for m in variants() {
        let exact = m.of_standard_normal();
        let estimate = m.apply(&full).unwrap();
        let per_batch: Vec<f64> = batches.iter().map(|b| m.apply(b).unwrap()).collect();
        let mean = per_batch.iter().sum::<f64>() / BATCHES as f64;
        let var = per_batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        // Batch spread over sqrt(batches) estimates the standard error of the full-sample value.
        let se = (var / BATCHES as f64).sqrt();
        assert!(
            (estimate - exact).abs() < 3.0 * se,
            "{m:?}: {estimate} vs {exact} (se {se})"
        );
    }
}
