//! Campaign configuration files (TOML).
//!
//! ```toml
//! name = "planted-kmvp"
//! rng_seed = 1
//!
//! [model]
//! path = "planted.nef"
//!
//! [limits]
//! preset = "retinal"        # or charge = "0.628 uC", current = "6 mA", active = 100
//! activity_epsilon = 0.0
//!
//! [strategy]
//! kind = "VO-KMVP"
//! k = 10
//! profiling_data = "profiling"
//!
//! [mutation]
//! seeds = "seeds"
//! m = 10
//!
//! [budget]
//! test_limit = 5000
//! mode = "fixed"            # or "equal_time"
//!
//! [diversity]
//! extractor = "builtin:pool8"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage::{MetricConfig, MetricKind};
use crate::diversity::DiversityProtocol;
use crate::fuzzer::FuzzConfig;
use crate::mutation::MutationConfig;
use crate::safety::{parse_charge_nc, parse_current_ua, SafetyLimits};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// The file is readable but does not follow the schema.
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn schema<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Schema(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every strategy runs exactly `test_limit` tests.
    #[default]
    Fixed,
    /// `test_limit` applies to the baseline strategy; others get the same wall-clock time.
    EqualTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub test_limit: u64,
    pub mode: BudgetMode,
    /// Tests timed per strategy when calibrating an equal-time budget.
    pub calibration_tests: u64,
    pub baseline: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    /// `builtin:pool8`, `builtin:pixels`, or a NEF path.
    pub extractor: String,
    pub protocol: DiversityProtocol,
}

/// A validated campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub name: String,
    pub rng_seed: u64,
    pub model_path: PathBuf,
    pub limits_preset: Option<String>,
    pub limits: SafetyLimits,
    pub metric: MetricConfig,
    pub seeds_path: PathBuf,
    pub profiling_data: Option<PathBuf>,
    pub profiling_stats: Option<PathBuf>,
    pub fuzz: FuzzConfig,
    pub budget: BudgetConfig,
    pub diversity: DiversityConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    rng_seed: Option<u64>,
    model: Option<RawModel>,
    limits: Option<RawLimits>,
    strategy: Option<RawStrategy>,
    mutation: Option<RawMutation>,
    #[serde(default)]
    budget: RawBudget,
    #[serde(default)]
    diversity: RawDiversity,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    preset: Option<String>,
    /// nC, or a string with unit.
    charge: Option<Quantity>,
    /// µA, or a string with unit.
    current: Option<Quantity>,
    active: Option<f64>,
    activity_epsilon: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    kind: String,
    k: Option<usize>,
    kmvp_range: Option<[f64; 2]>,
    nc_threshold: Option<f64>,
    tknc_k: Option<usize>,
    gamma: Option<f64>,
    p_min: Option<f64>,
    profiling_data: Option<PathBuf>,
    profiling_stats: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMutation {
    seeds: Option<PathBuf>,
    m: Option<usize>,
    ranges: Option<MutationConfig>,
    local: Option<MutationConfig>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    test_limit: Option<u64>,
    mode: Option<BudgetMode>,
    calibration_tests: Option<u64>,
    baseline: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDiversity {
    extractor: Option<String>,
    subset_size: Option<usize>,
    subsets: Option<usize>,
    normalize: Option<bool>,
}

fn quantity(
    q: Quantity,
    parse: fn(&str) -> Result<f64, crate::safety::SafetyError>,
    what: &str,
) -> Result<f64, ConfigError> {
    match q {
        Quantity::Number(v) => Ok(v),
        Quantity::Text(t) => parse(&t).map_err(|e| ConfigError::Schema(format!("limits.{what}: {e}"))),
    }
}

fn parse_limits(raw: Option<RawLimits>) -> Result<(Option<String>, SafetyLimits), ConfigError> {
    let Some(raw) = raw else {
        return schema("[limits] section is required");
    };
    let preset = match &raw.preset {
        Some(name) => Some(SafetyLimits::preset(name).ok_or_else(|| {
            ConfigError::Schema(format!("limits.preset {name:?} is not \"retinal\" or \"cortical\""))
        })?),
        None => None,
    };
    let charge = raw.charge.map(|q| quantity(q, parse_charge_nc, "charge")).transpose()?;
    let current = raw
        .current
        .map(|q| quantity(q, parse_current_ua, "current"))
        .transpose()?;
    let mut limits = match (preset, charge, current, raw.active) {
        (Some(p), c, i, a) => SafetyLimits {
            charge_limit_nc: c.unwrap_or(p.charge_limit_nc),
            current_limit_ua: i.unwrap_or(p.current_limit_ua),
            active_limit: a.unwrap_or(p.active_limit),
            ..p
        },
        (None, Some(c), Some(i), Some(a)) => SafetyLimits {
            charge_limit_nc: c,
            current_limit_ua: i,
            active_limit: a,
            activity_epsilon_ua: 0.0,
        },
        _ => return schema("limits: give a preset or all of charge, current and active"),
    };
    if let Some(eps) = raw.activity_epsilon {
        limits.activity_epsilon_ua = eps;
    }
    limits
        .validate()
        .map_err(|e| ConfigError::Schema(format!("limits: {e}")))?;
    Ok((raw.preset, limits))
}

impl CampaignConfig {
    /// Parses TOML text; `base_dir` anchors relative paths.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Schema(e.message().to_string()))?;

        let model_path = match raw.model.and_then(|m| m.path) {
            Some(p) => p,
            None => return schema("model.path is required"),
        };
        let (limits_preset, limits) = parse_limits(raw.limits)?;

        let Some(strategy) = raw.strategy else {
            return schema("[strategy] section is required");
        };
        let kind: MetricKind = strategy.kind.parse().map_err(ConfigError::Schema)?;
        let defaults = MetricConfig::new(kind);
        let metric = MetricConfig {
            kind,
            k: strategy.k.unwrap_or(defaults.k),
            kmvp_range: strategy.kmvp_range.unwrap_or(defaults.kmvp_range),
            nc_threshold: strategy.nc_threshold.unwrap_or(defaults.nc_threshold),
            tknc_k: strategy.tknc_k.unwrap_or(defaults.tknc_k),
        };
        metric
            .validate()
            .map_err(|e| ConfigError::Schema(format!("strategy: {e}")))?;
        if strategy.profiling_data.is_none() && strategy.profiling_stats.is_none() {
            if let Some(space) = kind.profile_space() {
                return schema(format!(
                    "strategy {kind} profiles {space:?}; set strategy.profiling_data or strategy.profiling_stats"
                ));
            }
        }

        let Some(mutation) = raw.mutation else {
            return schema("[mutation] section is required");
        };
        let Some(seeds_path) = mutation.seeds else {
            return schema("mutation.seeds is required");
        };

        let rng_seed = raw.rng_seed.unwrap_or(0);
        let fuzz_defaults = FuzzConfig::default();
        let budget_mode = raw.budget.mode.unwrap_or_default();
        let fuzz = FuzzConfig {
            m: mutation.m.unwrap_or(fuzz_defaults.m),
            test_limit: raw.budget.test_limit.unwrap_or(fuzz_defaults.test_limit),
            gamma: strategy.gamma.unwrap_or(fuzz_defaults.gamma),
            p_min: strategy.p_min.unwrap_or(fuzz_defaults.p_min),
            rng_seed,
            mutation: mutation.ranges.unwrap_or_default(),
            local_mutation: mutation.local.unwrap_or_else(MutationConfig::local),
        };
        // Seed count is unknown until the seeds are loaded; checked again then.
        fuzz.validate(0).map_err(|e| ConfigError::Schema(e.to_string()))?;

        let baseline = match raw.budget.baseline {
            Some(b) => b.parse().map_err(ConfigError::Schema)?,
            None => MetricKind::BasicNone,
        };
        let budget = BudgetConfig {
            test_limit: fuzz.test_limit,
            mode: budget_mode,
            calibration_tests: raw.budget.calibration_tests.unwrap_or(200),
            baseline,
        };
        if budget.mode == BudgetMode::EqualTime && budget.calibration_tests == 0 {
            return schema("budget.calibration_tests must be >= 1 for equal_time budgets");
        }

        let dp = DiversityProtocol::default();
        let diversity = DiversityConfig {
            extractor: raw.diversity.extractor.unwrap_or_else(|| "builtin:pool8".into()),
            protocol: DiversityProtocol {
                subset_size: raw.diversity.subset_size.unwrap_or(dp.subset_size),
                subsets: raw.diversity.subsets.unwrap_or(dp.subsets),
                normalize: raw.diversity.normalize.unwrap_or(dp.normalize),
            },
        };
        if diversity.protocol.subset_size == 0 {
            return schema("diversity.subset_size must be >= 1");
        }

        Ok(Self {
            name: raw.name.unwrap_or_else(|| kind.name().to_string()),
            rng_seed,
            model_path,
            limits_preset,
            limits,
            metric,
            seeds_path,
            profiling_data: strategy.profiling_data,
            profiling_stats: strategy.profiling_stats,
            fuzz,
            budget,
            diversity,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn set_rng_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.fuzz.rng_seed = seed;
    }
}

/// RNG seed precedence: explicit flag, then `FUZZ_RNG_SEED`, then the config file.
pub fn resolve_rng_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64, ConfigError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env {
        Some(text) if !text.trim().is_empty() => text
            .trim()
            .parse()
            .map_err(|_| ConfigError::Schema(format!("FUZZ_RNG_SEED {text:?} is not an unsigned integer"))),
        _ => Ok(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        path = "m.nef"
        [limits]
        preset = "retinal"
        [strategy]
        kind = "VO-KMVP"
        [mutation]
        seeds = "seeds"
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = CampaignConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.metric, MetricConfig::new(MetricKind::Kmvp));
        assert_eq!(c.fuzz.m, 10);
        assert_eq!(c.fuzz.test_limit, 5000);
        assert_eq!(c.limits, SafetyLimits::retinal());
        assert_eq!(c.budget.mode, BudgetMode::Fixed);
        assert_eq!(c.resolve(&c.model_path), PathBuf::from("/base/m.nef"));
        assert_eq!(c.name, "VO-KMVP");
    }

    #[test]
    fn missing_model_path_is_a_schema_error() {
        let text = MINIMAL.replace("path = \"m.nef\"", "");
        assert!(matches!(
            CampaignConfig::from_toml(&text, Path::new(".")),
            Err(ConfigError::Schema(m)) if m.contains("model.path")
        ));
    }

    #[test]
    fn explicit_limits_with_units() {
        let text = MINIMAL.replace(
            "preset = \"retinal\"",
            "charge = \"20.4 nC\"\ncurrent = \"3.6 mA\"\nactive = 30",
        );
        let c = CampaignConfig::from_toml(&text, Path::new(".")).unwrap();
        assert!((c.limits.current_limit_ua - 3600.0).abs() < 1e-9);
        assert_eq!(c.limits.active_limit, 30.0);
        assert_eq!(c.limits_preset, None);
    }

    #[test]
    fn unknown_keys_and_kinds_are_rejected() {
        let text = MINIMAL.replace("kind = \"VO-KMVP\"", "kind = \"VO-NOPE\"");
        assert!(matches!(
            CampaignConfig::from_toml(&text, Path::new(".")),
            Err(ConfigError::Schema(_))
        ));
        let text = format!("{MINIMAL}\n[budget]\nbogus = 1\n");
        assert!(matches!(
            CampaignConfig::from_toml(&text, Path::new(".")),
            Err(ConfigError::Schema(_))
        ));
    }

    #[test]
    fn profiling_metrics_need_a_dataset() {
        let text = MINIMAL.replace("VO-KMVP", "VO-KMOC");
        assert!(matches!(
            CampaignConfig::from_toml(&text, Path::new(".")),
            Err(ConfigError::Schema(_))
        ));
    }

    #[test]
    fn mutation_ranges_are_configurable() {
        let text = format!("{MINIMAL}\n[mutation.ranges]\nkinds = [\"noise\"]\nnoise_sigma = [0.1, 0.2]\n");
        let c = CampaignConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(c.fuzz.mutation.noise_sigma, [0.1, 0.2]);
        assert_eq!(c.fuzz.mutation.kinds.len(), 1);
    }

    #[test]
    fn rng_precedence() {
        assert_eq!(resolve_rng_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_rng_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_rng_seed(None, None, 3).unwrap(), 3);
        assert!(resolve_rng_seed(None, Some("x"), 3).is_err());
    }
}
