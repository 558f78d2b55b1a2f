//! Subcommand pipelines. Each returns an [`Outcome`] that is written as a
//! JSON report and a CSV table; neither contains timing or thread counts, so
//! reruns with the same config and seed are byte-identical.

use std::path::{Path, PathBuf};

use mpval::gaussian::build_tree;
use mpval::ordering::{compare_filtrations, lemma_check};
use mpval::portfolio::{PortfolioSampler, DEFAULT_PARTICLES};
use mpval::tree::{backward_value, sample_tree};
use mpval::{DeltaProfile, GaussianModel, ScenarioTree};
use serde_json::{json, Value};

use crate::config::{load_gaussian, load_tree, resolve, Config};
use crate::error::{at, CliError};

pub const SCHEMA_VERSION: u32 = 1;

pub struct Outcome {
    pub kind: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: Value,
    pub results: Value,
    pub table: Table,
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl Outcome {
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf), CliError> {
        let out = |e: std::io::Error| CliError::Output(format!("{}: {e}", stem.display()));
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(out)?;
        }
        let json_path = with_suffix(stem, "json");
        let csv_path = with_suffix(stem, "csv");
        let report = json!({
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "results": self.results,
        });
        let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        std::fs::write(&json_path, text).map_err(out)?;

        let mut csv = String::new();
        csv.push_str(&self.table.header.join(","));
        csv.push('\n');
        for row in &self.table.rows {
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(&csv_path, csv).map_err(out)?;
        Ok((json_path, csv_path))
    }
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn echo(config: &Config) -> Value {
    serde_json::to_value(config).expect("config serializes")
}

fn model_echo(m: &GaussianModel) -> Value {
    json!({
        "horizon": m.horizon(),
        "aux_dim": m.aux_dim(),
        "mean": m.mean().as_slice(),
        "cov": m.cov().row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
    })
}

/// Gaussian model from a file, or the Gaussian limit of the portfolio model.
fn gaussian_source(config: &Config, base: &Path) -> Result<GaussianModel, CliError> {
    match (&config.model.gaussian, &config.model.portfolio) {
        (Some(path), None) => load_gaussian(base, path, "model.gaussian"),
        (None, Some(_)) => at(
            "model.portfolio",
            config.portfolio()?.gaussian_limit(config.information),
        ),
        _ => Err(CliError::Validation(
            "model: give exactly one of `gaussian` or `portfolio`".into(),
        )),
    }
}

pub fn value_gaussian(config: &Config, base: &Path) -> Result<Outcome, CliError> {
    let model = gaussian_source(config, base)?;
    let schedule = config.schedule(model.horizon())?;
    let vs = at("model", model.variance_schedule())?;
    let v0 = at("schedule", model.limit_value(&schedule))?;
    let innovations = at("model", model.innovation_variances())?;
    let mut table = Table::new(["t", "delta_var", "conditional_var", "phi_eps", "contribution"]);
    let mut phis = Vec::new();
    for (t, d) in vs.deltas.iter().enumerate() {
        let phi = schedule.at(t).of_standard_normal();
        phis.push(phi);
        table.push(vec![
            (t + 1).to_string(),
            num(*d),
            num(vs.conditional[t + 1]),
            num(phi),
            num(phi * d.sqrt()),
        ]);
    }
    Ok(Outcome {
        kind: "value-gaussian",
        seed: config.seed,
        config: echo(config),
        inputs: json!({ "gaussian": model_echo(&model) }),
        results: json!({
            "v0": v0,
            "expected_total": model.expected_total(),
            "variance_total": vs.total,
            "deltas": vs.deltas,
            "conditional_variances": vs.conditional,
            "innovation_variances": innovations,
            "phi_eps": phis,
            "convex_decay": vs.is_convex(1e-12 * vs.total.max(1.0)),
        }),
        table,
    })
}

pub fn value_tree(config: &Config, base: &Path) -> Result<Outcome, CliError> {
    let m = &config.model;
    let sources = [m.tree.is_some(), m.gaussian.is_some(), m.portfolio.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(CliError::Validation(
            "model: give exactly one of `tree`, `gaussian` or `portfolio`".into(),
        ));
    }
    let mut table = Table::new(["seed", "nodes", "v0", "reference", "relative_error"]);
    let mut runs = Vec::new();
    let mut inputs = json!({});
    let mut dumped = false;
    let mut record = |seed: Option<u64>,
                      tree: &ScenarioTree,
                      v0: f64,
                      reference: Option<f64>,
                      table: &mut Table|
     -> Result<(), CliError> {
        let rel = reference.map(|r| (v0 - r) / r.abs());
        table.push(vec![
            seed.map_or(String::new(), |s| s.to_string()),
            tree.len().to_string(),
            num(v0),
            reference.map_or(String::new(), num),
            rel.map_or(String::new(), num),
        ]);
        runs.push(
            json!({ "seed": seed, "nodes": tree.len(), "v0": v0, "reference": reference, "relative_error": rel }),
        );
        if let (Some(path), false) = (&config.dump_tree, dumped) {
            let full = resolve(base, path);
            let file = std::fs::File::create(&full).map_err(|e| CliError::Output(format!("dump_tree: {e}")))?;
            tree.write_text(std::io::BufWriter::new(file))
                .map_err(|e| CliError::Output(format!("dump_tree: {e}")))?;
            dumped = true;
        }
        Ok(())
    };

    let source;
    if let Some(path) = &m.tree {
        source = "tree";
        let tree = load_tree(base, path, "model.tree")?;
        let schedule = config.schedule(tree.horizon())?;
        let v0 = at("schedule", backward_value(&tree, &schedule))?.v0;
        record(None, &tree, v0, None, &mut table)?;
    } else if let Some(path) = &m.gaussian {
        source = "gaussian";
        let model = load_gaussian(base, path, "model.gaussian")?;
        inputs = json!({ "gaussian": model_echo(&model) });
        let schedule = config.schedule(model.horizon())?;
        let limit = at("model.gaussian", model.limit_value(&schedule))?;
        for seed in config.seed_list() {
            let tree = at("branching", build_tree(&model, config.branching()?, seed))?;
            let v0 = at("schedule", backward_value(&tree, &schedule))?.v0;
            record(Some(seed), &tree, v0, Some(limit), &mut table)?;
        }
    } else {
        source = "portfolio";
        let model = config.portfolio()?;
        let n = config
            .exposure
            .ok_or_else(|| CliError::Validation("exposure: missing".into()))?;
        let schedule = config.schedule(model.horizon())?;
        for seed in config.seed_list() {
            let tree = portfolio_tree(config, n, seed)?;
            let r = at(
                "model.portfolio",
                model.value_tree(&tree, n, &schedule, config.information),
            )?;
            record(Some(seed), &tree, r.v0_raw, Some(r.approximation), &mut table)?;
        }
    }
    let mut rel: Vec<f64> = runs.iter().filter_map(|r| r["relative_error"].as_f64()).collect();
    Ok(Outcome {
        kind: "value-tree",
        seed: config.seed,
        config: echo(config),
        inputs,
        results: json!({
            "source": source,
            "runs": runs,
            "median_relative_error": median(&mut rel),
        }),
        table,
    })
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

fn portfolio_tree(config: &Config, n: u64, seed: u64) -> Result<ScenarioTree, CliError> {
    let model = config.portfolio()?;
    let sampler = at("model.portfolio", PortfolioSampler::new(model, n, config.information))?
        .with_particles(config.particles.unwrap_or(DEFAULT_PARTICLES));
    at("branching", sample_tree(&sampler, config.branching()?, seed))
}

pub fn simulate(config: &Config) -> Result<Outcome, CliError> {
    let model = config.portfolio()?;
    let n = config
        .exposure
        .ok_or_else(|| CliError::Validation("exposure: missing".into()))?;
    let reps = config.replications.unwrap_or(1000);
    let samples = at("model.portfolio", model.simulate_replications(n, reps, config.seed))?;
    let scaling = at("exposure", model.clt_scaling(n))?;
    let horizon = model.horizon();
    let mut header = vec!["n".to_string(), "seed".into(), "replication".into()];
    header.extend((1..=horizon).map(|t| format!("c_{t}")));
    header.extend((1..=horizon).map(|t| format!("count_{t}")));
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut mean_c = vec![0.0; horizon];
    let mut mean_counts = vec![0.0; horizon];
    for (r, s) in samples.iter().enumerate() {
        let mut row = vec![n.to_string(), config.seed.to_string(), r.to_string()];
        row.extend(s.c.iter().map(|v| num(*v)));
        row.extend(s.counts.iter().map(|v| v.to_string()));
        table.push(row);
        for t in 0..horizon {
            mean_c[t] += s.c[t] / reps as f64;
            mean_counts[t] += s.counts[t] as f64 / reps as f64;
        }
    }
    Ok(Outcome {
        kind: "simulate",
        seed: config.seed,
        config: echo(config),
        inputs: json!({}),
        results: json!({
            "n": n,
            "replications": reps,
            "mean_c": mean_c,
            "mean_counts": mean_counts,
            "expected_c": scaling.b,
            "expected_counts": model.count_centering(n),
            "a_n": scaling.a,
            "scaled_mean": scaling.scale(&mean_c),
        }),
        table,
    })
}

pub fn converge(config: &Config) -> Result<Outcome, CliError> {
    let model = config.portfolio()?;
    let exposures = config
        .exposures
        .clone()
        .ok_or_else(|| CliError::Validation("exposures: missing".into()))?;
    let schedule = config.schedule(model.horizon())?;
    let limit_model = at("model.portfolio", model.gaussian_limit(config.information))?;
    let limit_vs = at("model.portfolio", limit_model.variance_schedule())?;
    let seeds = config.seed_list();
    let mut table = Table::new(["n", "seed", "v0_raw", "v0_scaled", "approximation", "signed_gap"]);
    let mut summary = Vec::new();
    for &n in &exposures {
        let mut gaps = Vec::new();
        let mut last = None;
        for &seed in &seeds {
            let tree = portfolio_tree(config, n, seed)?;
            let r = at(
                "model.portfolio",
                model.value_tree(&tree, n, &schedule, config.information),
            )?;
            table.push(vec![
                n.to_string(),
                seed.to_string(),
                num(r.v0_raw),
                num(r.v0_scaled),
                num(r.approximation),
                num(r.signed_gap),
            ]);
            gaps.push(r.signed_gap);
            last = Some(r);
        }
        let r = last.expect("at least one seed");
        let k = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / k;
        let se =
            (gaps.len() > 1).then(|| (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt());
        summary.push(json!({
            "n": n,
            "a_n": r.a_n,
            "b_n": r.b_n,
            "limit_v0": r.limit_v0,
            "approximation": r.approximation,
            "mean_signed_gap": mean,
            "pooled_gap": mean.abs(),
            "pooled_se": se,
            "exact_conditional": r.exact_conditional,
        }));
    }
    Ok(Outcome {
        kind: "converge",
        seed: config.seed,
        config: echo(config),
        inputs: json!({ "gaussian_limit": model_echo(&limit_model) }),
        results: json!({
            "seeds": seeds,
            "phi0_eps": schedule.at(0).of_standard_normal(),
            "limit_variance_total": limit_vs.total,
            "by_exposure": summary,
        }),
        table,
    })
}

pub fn compare(config: &Config, base: &Path) -> Result<Outcome, CliError> {
    let coarse = config
        .model
        .coarse
        .as_ref()
        .ok_or_else(|| CliError::Validation("model.coarse: missing".into()))?;
    let fine = config
        .model
        .fine
        .as_ref()
        .ok_or_else(|| CliError::Validation("model.fine: missing".into()))?;
    let f = load_gaussian(base, coarse, "model.coarse")?;
    let g = load_gaussian(base, fine, "model.fine")?;
    let mapping = config.constant_mapping()?;
    let report = at("model", compare_filtrations(&f, &g, &mapping))?;
    let mut table = Table::new([
        "v0_coarse",
        "v0_fine",
        "phi_eps",
        "convexity_holds",
        "prefix_domination",
        "ordering_holds",
    ]);
    table.push(vec![
        num(report.v0_f),
        num(report.v0_g),
        num(report.phi_eps),
        report.convexity_holds.to_string(),
        report.prefix_domination.to_string(),
        report.ordering_holds.to_string(),
    ]);
    Ok(Outcome {
        kind: "compare-filtrations",
        seed: config.seed,
        config: echo(config),
        inputs: json!({ "coarse": model_echo(&f), "fine": model_echo(&g) }),
        results: serde_json::to_value(&report).expect("report serializes"),
        table,
    })
}

pub fn lemma(c: &[f64], step: f64, seed: u64) -> Result<Outcome, CliError> {
    let profile = at("--c", DeltaProfile::new(c.to_vec()))?;
    let report = at("--step", lemma_check(&profile, step))?;
    let mut table = Table::new([
        "c",
        "step",
        "objective_c",
        "max_found",
        "argmax",
        "c_is_max",
        "hypothesis_holds",
        "feasible_points",
    ]);
    table.push(vec![
        join(&report.c),
        num(step),
        num(report.objective_c),
        num(report.max_found),
        join(&report.argmax),
        report.c_is_max.to_string(),
        report.hypothesis_holds.to_string(),
        report.feasible_points.to_string(),
    ]);
    Ok(Outcome {
        kind: "lemma-check",
        seed,
        config: json!({ "c": c, "step": step }),
        inputs: json!({}),
        results: serde_json::to_value(&report).expect("report serializes"),
        table,
    })
}
