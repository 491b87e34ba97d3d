//! Experiment configuration file (TOML). Keys mirror the library's
//! configuration types; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use fdr_explore::data::synthetic::{adult_like, LogisticScenario};
use fdr_explore::data::{DatasetSpec, SplitMode};
use fdr_explore::oracle::VerificationConfig;
use fdr_explore::protocol::ProtocolConfig;
use fdr_explore::{AlgorithmConfig, StrategyKind, UtilityCoefficients};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Where artifacts go unless `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub utility: UtilityConfig,
    /// CSV data source.
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    /// Generated data source.
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default)]
    pub history: HistoryConfig,
    #[serde(default)]
    pub variants: VariantFlags,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_repetitions() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityConfig {
    Accuracy,
    PositiveRate,
    /// `c1`: loss per false positive, `c2`: profit per true positive (both
    /// positive magnitudes).
    Revenue { c1: f64, c2: f64 },
    Custom { g00: f64, g01: f64, g10: f64, g11: f64 },
}

impl Default for UtilityConfig {
    fn default() -> Self {
        UtilityConfig::Revenue { c1: 500.0, c2: 200.0 }
    }
}

impl UtilityConfig {
    pub fn coefficients(&self) -> Result<UtilityCoefficients, CliError> {
        Ok(match *self {
            UtilityConfig::Accuracy => UtilityCoefficients::accuracy(),
            UtilityConfig::PositiveRate => UtilityCoefficients::positive_rate(),
            UtilityConfig::Revenue { c1, c2 } => {
                UtilityCoefficients::revenue(c1, c2).map_err(|e| CliError::Config(format!("utility: {e}")))?
            }
            UtilityConfig::Custom { g00, g01, g10, g11 } => UtilityCoefficients::new(g00, g01, g10, g11),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    /// Named population; ignored when `scenario` is given.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub scenario: Option<LogisticScenario>,
    pub rows: usize,
    /// Seed of the population draw; defaults to `algorithm.seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub split: SplitMode,
    pub iterations: usize,
}

impl SyntheticSource {
    pub fn scenario(&self) -> Result<LogisticScenario, CliError> {
        if let Some(s) = &self.scenario {
            return Ok(s.clone());
        }
        match self.preset.as_deref().unwrap_or("adult_like") {
            "adult_like" => Ok(adult_like()),
            other => Err(CliError::Config(format!("synthetic.preset: unknown preset {other:?}"))),
        }
    }
}

/// How the historical labeled pool `L_0` is carved out of `S_0`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistoryConfig {
    pub positive_share: f64,
    pub propensity_floor: f64,
    pub hidden_positive_group: Option<usize>,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        HistoryConfig {
            positive_share: p.positive_share,
            propensity_floor: p.propensity_floor,
            hidden_positive_group: p.hidden_positive_group,
        }
    }
}

/// The four algorithm variants: fairness in exploitation (statistical-rate
/// bound on the trained classifier) and in exploration (`g = fair`).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantFlags {
    pub no_fairness: bool,
    pub exploit_fairness: bool,
    pub explore_fairness: bool,
    pub both_fairness: bool,
    /// Statistical-rate bound used by exploit fairness and by fair-clf.
    pub fairness_bound: f64,
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags {
            no_fairness: true,
            exploit_fairness: true,
            explore_fairness: true,
            both_fairness: true,
            fairness_bound: 0.05,
        }
    }
}

/// One named variant: `(name, exploit fairness on, explore fairness on)`.
pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("no_fairness", false, false),
    ("exploit_fairness", true, false),
    ("explore_fairness", false, true),
    ("both_fairness", true, true),
];

impl VariantFlags {
    pub fn enabled(&self) -> Vec<(&'static str, bool, bool)> {
        let on = [self.no_fairness, self.exploit_fairness, self.explore_fairness, self.both_fairness];
        VARIANTS.iter().zip(on).filter(|(_, on)| *on).map(|(v, _)| *v).collect()
    }

    /// The algorithm configuration of one variant.
    pub fn apply(&self, base: &AlgorithmConfig, exploit: bool, explore: bool) -> AlgorithmConfig {
        let mut a = base.clone();
        a.exploit_fairness = exploit.then_some(self.fairness_bound);
        if explore {
            a.exploration_strategy = StrategyKind::Fair;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportSpec {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub opt_offline: bool,
    pub fair_clf: bool,
    pub imports: Vec<ImportSpec>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { opt_offline: true, fair_clf: true, imports: Vec::new() }
    }
}

pub const CHECKS: [&str; 4] = ["feasibility", "convergence", "monotonicity", "reweighting"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub checks: Vec<String>,
    pub trials: usize,
    pub delta: f64,
    pub tolerance: f64,
    pub n: usize,
    pub iterations: usize,
    /// Batch size and tolerance of the reweighting check.
    pub reweighting_n: usize,
    pub reweighting_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let v = VerificationConfig::default();
        VerifyConfig {
            checks: CHECKS.iter().map(|s| s.to_string()).collect(),
            trials: v.trials,
            delta: v.delta,
            tolerance: v.tolerance,
            n: v.n,
            iterations: v.iterations,
            reweighting_n: 5000,
            reweighting_tolerance: 0.10,
        }
    }
}

impl VerifyConfig {
    pub fn settings(&self, check: &str, seed: u64) -> VerificationConfig {
        let mut v = VerificationConfig {
            trials: self.trials,
            delta: self.delta,
            tolerance: self.tolerance,
            n: self.n,
            iterations: self.iterations,
            seed,
        };
        if check == "reweighting" {
            v.n = self.reweighting_n;
            v.tolerance = self.reweighting_tolerance;
        }
        v
    }
}

/// A parsed configuration plus the raw bytes it came from (hashed into the
/// manifest).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Vec<u8>,
    pub path: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let raw = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
    let config = parse(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig { config, raw, path: path.to_path_buf() })
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate_common()?;
    Ok(config)
}

/// Where the experiment rows come from.
pub enum DataSource<'a> {
    Csv(&'a DatasetSpec),
    Synthetic(&'a SyntheticSource),
}

impl ExperimentConfig {
    fn validate_common(&self) -> Result<(), CliError> {
        let cfg = |e: fdr_explore::Error| CliError::Config(format!("algorithm: {e}"));
        self.algorithm.validate().map_err(cfg)?;
        self.utility.coefficients()?;
        if self.repetitions == 0 {
            return Err(CliError::Config("repetitions must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.variants.fairness_bound) {
            return Err(CliError::Config(format!(
                "variants.fairness_bound must lie in [0,1], got {}",
                self.variants.fairness_bound
            )));
        }
        if self.algorithm.exploit_fairness.is_some() {
            return Err(CliError::Config(
                "algorithm.exploit_fairness is set per variant; use variants.fairness_bound".into(),
            ));
        }
        if self.algorithm.exploration_strategy == StrategyKind::Fair {
            return Err(CliError::Config(
                "algorithm.exploration_strategy = \"fair\" is set per variant; use variants.explore_fairness".into(),
            ));
        }
        Ok(())
    }

    /// The data source of `run` and `baselines`; exactly one must be given.
    pub fn data_source(&self) -> Result<DataSource<'_>, CliError> {
        match (&self.dataset, &self.synthetic) {
            (Some(d), None) => {
                if d.path.as_os_str().is_empty() {
                    return Err(CliError::Config("dataset.path is empty".into()));
                }
                if !d.path.exists() {
                    return Err(CliError::Config(format!("dataset.path {} does not exist", d.path.display())));
                }
                d.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Ok(DataSource::Csv(d))
            }
            (None, Some(s)) => {
                if s.rows == 0 || s.iterations == 0 {
                    return Err(CliError::Config("synthetic.rows and synthetic.iterations must be positive".into()));
                }
                s.scenario()?.validate().map_err(|e| CliError::Config(format!("synthetic.scenario: {e}")))?;
                Ok(DataSource::Synthetic(s))
            }
            (None, None) => Err(CliError::Config("a [dataset] (with dataset.path) or [synthetic] section is required".into())),
            (Some(_), Some(_)) => Err(CliError::Config("give either [dataset] or [synthetic], not both".into())),
        }
    }

    pub fn protocol(&self) -> Result<ProtocolConfig, CliError> {
        let (iterations, split) = match self.data_source()? {
            DataSource::Csv(d) => (d.iterations, d.split),
            DataSource::Synthetic(s) => (s.iterations, s.split),
        };
        let p = ProtocolConfig {
            iterations,
            split,
            positive_share: self.history.positive_share,
            propensity_floor: self.history.propensity_floor,
            hidden_positive_group: self.history.hidden_positive_group,
        };
        p.validate().map_err(|e| CliError::Config(format!("history: {e}")))?;
        Ok(p)
    }

    pub fn unknown_checks(&self) -> Vec<&str> {
        self.verify.checks.iter().map(String::as_str).filter(|c| !CHECKS.contains(c)).collect()
    }
}
