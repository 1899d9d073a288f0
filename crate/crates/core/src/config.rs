//! The TOML configuration shared by simulation and analysis runs.
//!
//! Every block is optional; missing blocks take the simulation-study
//! defaults. Formulas are written as strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bootstrap::BootstrapSettings;
use crate::dataset::VariableSchema;
use crate::estimators::{
    default_contrasts, CopyMode, EstimatorConfig, EstimatorKind, NuisanceModels, QMode,
    SliceFitRows,
};
use crate::formula::{parse, Formula, FormulaError};
use crate::glm::Family;
use crate::simulate::{schema as simulation_schema, SimConfig, StudyConfig};
use crate::strategy::StrategySpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("formula `{formula}` in {context}: {source}")]
    Formula {
        context: String,
        formula: String,
        source: FormulaError,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSpec {
    pub baseline: String,
    pub treatment: String,
    pub measurement: String,
    pub censoring: Option<String>,
    pub stabilizer: String,
}

impl Default for ModelsSpec {
    fn default() -> Self {
        ModelsSpec {
            baseline: "l0".into(),
            treatment: "a0 + l".into(),
            measurement: "a + a0 + l".into(),
            censoring: None,
            stabilizer: "a0 + l0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: EstimatorKind,
    #[serde(default = "default_family")]
    pub family: Family,
    /// Defaults to the simulation-study outcome model for `kind`.
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub stratify_by_g: bool,
    #[serde(default)]
    pub time_saturated: bool,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default)]
    pub slice_fit_rows: SliceFitRows,
    #[serde(default)]
    pub copy_mode: CopyMode,
}

fn default_family() -> Family {
    Family::Linear
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastSpec {
    pub g1: String,
    pub g0: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapBlock {
    pub enabled: bool,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for BootstrapBlock {
    fn default() -> Self {
        let s = BootstrapSettings::default();
        BootstrapBlock {
            enabled: true,
            replicates: s.replicates,
            level: s.level,
            seed: s.seed,
            workers: s.workers,
        }
    }
}

impl BootstrapBlock {
    pub fn settings(&self) -> BootstrapSettings {
        BootstrapSettings {
            replicates: self.replicates,
            level: self.level,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Directory for report files; relative paths resolve against the
    /// working directory.
    pub dir: String,
    pub prefix: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: ".".into(),
            prefix: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Outcome times estimated for every strategy (merged with any
    /// per-strategy `t_star` lists).
    pub t_star: Vec<u32>,
    pub schema: Option<VariableSchema>,
    #[serde(rename = "strategy")]
    pub strategies: Vec<StrategySpec>,
    #[serde(rename = "contrast")]
    pub contrasts: Vec<ContrastSpec>,
    pub models: ModelsSpec,
    #[serde(rename = "estimator")]
    pub estimators: Vec<EstimatorSpec>,
    pub bootstrap: BootstrapBlock,
    pub output: OutputBlock,
    pub simulation: SimConfig,
    pub study: StudyConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            t_star: vec![6, 12, 18, 24],
            schema: None,
            strategies: Vec::new(),
            contrasts: Vec::new(),
            models: ModelsSpec::default(),
            estimators: Vec::new(),
            bootstrap: BootstrapBlock::default(),
            output: OutputBlock::default(),
            simulation: SimConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

fn formula(context: &str, text: &str) -> Result<Formula, ConfigError> {
    parse(text).map_err(|source| ConfigError::Formula {
        context: context.to_string(),
        formula: text.to_string(),
        source,
    })
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AnalysisConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads and parses `path`; also returns the SHA-256 of the file bytes.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| ConfigError::Parse(format!("`{}` is not UTF-8", path.display())))?;
        Ok((Self::from_toml(&text)?, sha256_hex(&bytes)))
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.simulation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.bootstrap
            .settings()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.study
            .bootstrap
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(s) = &self.schema {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let strategies = self.strategies();
        let labels: Vec<&str> = strategies.iter().map(|s| s.label.as_str()).collect();
        for c in &self.contrasts {
            for g in [&c.g1, &c.g0] {
                if !labels.contains(&g.as_str()) {
                    return Err(ConfigError::Invalid(format!("contrast names unknown strategy `{g}`")));
                }
            }
        }
        let mut names = std::collections::HashSet::new();
        for e in self.estimator_configs()? {
            if !names.insert(e.name.clone()) {
                return Err(ConfigError::Invalid(format!("estimator name `{}` repeats", e.name)));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> VariableSchema {
        self.schema.clone().unwrap_or_else(simulation_schema)
    }

    /// Configured strategies, or the simulation's two grace strategies.
    pub fn strategies(&self) -> Vec<StrategySpec> {
        if self.strategies.is_empty() {
            self.simulation.strategies()
        } else {
            self.strategies.clone()
        }
    }

    /// Sorted union of the top-level and per-strategy outcome times.
    pub fn t_stars(&self) -> Vec<u32> {
        let mut t: Vec<u32> = self
            .t_star
            .iter()
            .chain(self.strategies.iter().flat_map(|s| &s.t_star))
            .copied()
            .collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn contrast_pairs(&self) -> Vec<(String, String)> {
        if self.contrasts.is_empty() {
            default_contrasts(&self.strategies())
        } else {
            self.contrasts
                .iter()
                .map(|c| (c.g1.clone(), c.g0.clone()))
                .collect()
        }
    }

    pub fn nuisance_models(&self) -> Result<NuisanceModels, ConfigError> {
        let m = &self.models;
        Ok(NuisanceModels {
            baseline: formula("models.baseline", &m.baseline)?,
            treatment: formula("models.treatment", &m.treatment)?,
            measurement: formula("models.measurement", &m.measurement)?,
            censoring: m
                .censoring
                .as_deref()
                .map(|c| formula("models.censoring", c))
                .transpose()?,
            stabilizer: formula("models.stabilizer", &m.stabilizer)?,
        })
    }

    /// Estimators to run; all three kinds with default settings when none
    /// are configured.
    pub fn estimator_configs(&self) -> Result<Vec<EstimatorConfig>, ConfigError> {
        let models = self.nuisance_models()?;
        let specs: Vec<EstimatorSpec> = if self.estimators.is_empty() {
            [EstimatorKind::NonSmoothed, EstimatorKind::Nonstacked, EstimatorKind::Stacked]
                .into_iter()
                .map(|kind| EstimatorSpec {
                    name: None,
                    kind,
                    family: Family::Linear,
                    outcome: None,
                    stratify_by_g: false,
                    time_saturated: false,
                    truncation: None,
                    q_mode: QMode::Fitted,
                    slice_fit_rows: SliceFitRows::SurvivorHistory,
                    copy_mode: CopyMode::Auto,
                })
                .collect()
        } else {
            self.estimators.clone()
        };
        specs
            .iter()
            .map(|s| {
                let mut cfg = EstimatorConfig::simulation_default(s.kind);
                if let Some(name) = &s.name {
                    cfg.name = name.clone();
                }
                if let Some(outcome) = &s.outcome {
                    cfg.outcome_formula = formula(&format!("estimator `{}`", cfg.name), outcome)?;
                }
                if let Some(p) = s.truncation {
                    if !(p > 0.0 && p <= 1.0) {
                        return Err(ConfigError::Invalid(format!(
                            "estimator `{}`: truncation {p} outside (0, 1]",
                            cfg.name
                        )));
                    }
                }
                cfg.family = s.family;
                cfg.stratify_by_g = s.stratify_by_g;
                cfg.time_saturated = s.time_saturated;
                cfg.truncation = s.truncation;
                cfg.q_mode = s.q_mode;
                cfg.slice_fit_rows = s.slice_fit_rows;
                cfg.copy_mode = s.copy_mode;
                cfg.models = models.clone();
                Ok(cfg)
            })
            .collect()
    }
}
