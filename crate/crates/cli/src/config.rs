//! Experiment configuration files.
//!
//! Relative paths inside a config are resolved against the config file's
//! directory. Unknown keys are rejected so typos cannot silently fall back to
//! defaults.

use std::path::{Path, PathBuf};

use mpval::dist::PiecewiseDensity;
use mpval::portfolio::{Information, PortfolioModel};
use mpval::{GaussianModel, OneStepMapping, ScenarioTree, SpectralMeasure, ValuationSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{at, CliError};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Optional; must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Output stem: results go to `<output>.json` and `<output>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branching: Option<Vec<usize>>,
    /// Number of consecutive seeds `seed, seed + 1, ..` for replicated runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposures: Option<Vec<u64>>,
    #[serde(default)]
    pub information: Information,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    /// Writes the valued tree in the text tree format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_tree: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portfolio: Option<PortfolioModel>,
    /// Coarser-information model for filtration comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<PathBuf>,
    /// Finer-information model for filtration comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// One mapping used in every period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingConfig>,
    /// One mapping per period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mappings: Option<Vec<MappingConfig>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MappingConfig {
    CostOfCapital {
        eta: f64,
        rho: MeasureConfig,
    },
    LimitedLiability {
        gamma: f64,
        beta: f64,
        rho: MeasureConfig,
    },
    CocLimitedLiability {
        eta: f64,
        rho: MeasureConfig,
    },
    PowerUtility {
        beta: f64,
        rho: MeasureConfig,
    },
    MeanStd {
        c: f64,
    },
    QuantileMixture {
        lambda: f64,
        mu1: MeasureConfig,
        mu2: MeasureConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    PointMass { p: f64 },
    TailUniform { u: f64 },
    BoundedDensity { breakpoints: Vec<f64>, levels: Vec<f64> },
    CompactSupport { breakpoints: Vec<f64>, levels: Vec<f64> },
}

impl MeasureConfig {
    fn build(&self, key: &str) -> Result<SpectralMeasure, CliError> {
        let m = match self {
            MeasureConfig::PointMass { p } => SpectralMeasure::PointMass { p: *p },
            MeasureConfig::TailUniform { u } => SpectralMeasure::TailUniform { u: *u },
            MeasureConfig::BoundedDensity { breakpoints, levels } => {
                SpectralMeasure::BoundedDensity(at(key, PiecewiseDensity::new(breakpoints.clone(), levels.clone()))?)
            }
            MeasureConfig::CompactSupport { breakpoints, levels } => at(
                key,
                PiecewiseDensity::new(breakpoints.clone(), levels.clone()).and_then(SpectralMeasure::compact_support),
            )?,
        };
        at(key, m.validate())?;
        Ok(m)
    }
}

impl MappingConfig {
    pub fn build(&self, key: &str) -> Result<OneStepMapping, CliError> {
        let rho = |m: &MeasureConfig, name: &str| m.build(&format!("{key}.{name}"));
        let m = match self {
            MappingConfig::CostOfCapital { eta, rho: r } => OneStepMapping::cost_of_capital(*eta, rho(r, "rho")?),
            MappingConfig::LimitedLiability { gamma, beta, rho: r } => {
                OneStepMapping::limited_liability(*gamma, *beta, rho(r, "rho")?)
            }
            MappingConfig::CocLimitedLiability { eta, rho: r } => OneStepMapping::coc_ll(*eta, rho(r, "rho")?),
            MappingConfig::PowerUtility { beta, rho: r } => OneStepMapping::power_utility(*beta, rho(r, "rho")?),
            MappingConfig::MeanStd { c } => OneStepMapping::mean_std(*c),
            MappingConfig::QuantileMixture { lambda, mu1, mu2 } => {
                OneStepMapping::quantile_mixture(*lambda, rho(mu1, "mu1")?, rho(mu2, "mu2")?)
            }
        };
        at(key, m)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn check_kind(&self, kind: &str) -> Result<(), CliError> {
        match &self.kind {
            Some(k) if k != kind => Err(CliError::Validation(format!(
                "kind: config is for `{k}` but the subcommand is `{kind}`"
            ))),
            _ => Ok(()),
        }
    }

    pub fn schedule(&self, horizon: usize) -> Result<ValuationSchedule, CliError> {
        let section = self
            .schedule
            .as_ref()
            .ok_or_else(|| CliError::Validation("schedule: missing section".into()))?;
        match (&section.mapping, &section.mappings) {
            (Some(m), None) => at(
                "schedule",
                ValuationSchedule::constant(m.build("schedule.mapping")?, horizon),
            ),
            (None, Some(ms)) => {
                if ms.len() != horizon {
                    return Err(CliError::Validation(format!(
                        "schedule.mappings: {} mappings for horizon {horizon}",
                        ms.len()
                    )));
                }
                let built = ms
                    .iter()
                    .enumerate()
                    .map(|(t, m)| m.build(&format!("schedule.mappings[{t}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                at("schedule.mappings", ValuationSchedule::new(built))
            }
            _ => Err(CliError::Validation(
                "schedule: give exactly one of `mapping` or `mappings`".into(),
            )),
        }
    }

    /// The single mapping of a time-constant schedule.
    pub fn constant_mapping(&self) -> Result<OneStepMapping, CliError> {
        match self.schedule.as_ref().and_then(|s| s.mapping.as_ref()) {
            Some(m) if self.schedule.as_ref().is_some_and(|s| s.mappings.is_none()) => m.build("schedule.mapping"),
            _ => Err(CliError::Validation(
                "schedule.mapping: a single time-constant mapping is required".into(),
            )),
        }
    }

    pub fn branching(&self) -> Result<&[usize], CliError> {
        self.branching
            .as_deref()
            .ok_or_else(|| CliError::Validation("branching: missing".into()))
    }

    pub fn portfolio(&self) -> Result<&PortfolioModel, CliError> {
        let p = self
            .model
            .portfolio
            .as_ref()
            .ok_or_else(|| CliError::Validation("model.portfolio: missing".into()))?;
        at("model.portfolio", p.validate())?;
        Ok(p)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds.unwrap_or(1).max(1) as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn load_gaussian(base: &Path, path: &Path, key: &str) -> Result<GaussianModel, CliError> {
    let full = resolve(base, path);
    let file =
        std::fs::File::open(&full).map_err(|e| CliError::Validation(format!("{key}: {}: {e}", full.display())))?;
    at(key, GaussianModel::read_text(std::io::BufReader::new(file)))
}

pub fn load_tree(base: &Path, path: &Path, key: &str) -> Result<ScenarioTree, CliError> {
    let full = resolve(base, path);
    let file =
        std::fs::File::open(&full).map_err(|e| CliError::Validation(format!("{key}: {}: {e}", full.display())))?;
    at(key, ScenarioTree::read_text(std::io::BufReader::new(file)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_schedules_and_rejects_unknown_keys() {
        let cfg: Config = toml::from_str(
            r#"
            seed = 7
            [schedule.mapping]
            kind = "cost_of_capital"
            eta = 0.06
            rho = { kind = "point_mass", p = 0.995 }
            "#,
        )
        .unwrap();
        let s = cfg.schedule(3).unwrap();
        assert_eq!(s.horizon(), 3);
        assert!((s.at(0).of_standard_normal() - 0.145_801_658_691_447_2).abs() < 1e-12);

        assert!(toml::from_str::<Config>("sede = 1").is_err());
        let bad: Config = toml::from_str("[schedule.mapping]\nkind = \"mean_std\"\nc = -1.0\n").unwrap();
        let err = bad.schedule(2).unwrap_err();
        assert!(err.to_string().contains("schedule.mapping"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn per_period_schedule_must_match_horizon() {
        let cfg: Config = toml::from_str(
            r#"
            [[schedule.mappings]]
            kind = "mean_std"
            c = 1.0
            [[schedule.mappings]]
            kind = "quantile_mixture"
            lambda = 0.5
            mu1 = { kind = "tail_uniform", u = 0.1 }
            mu2 = { kind = "compact_support", breakpoints = [0.2, 0.9], levels = [1.4285714285714286] }
            "#,
        )
        .unwrap();
        assert!(cfg.schedule(2).is_ok());
        assert!(cfg.schedule(3).is_err());
        assert!(cfg.constant_mapping().is_err());
    }
}
