//! Versioned JSON and flat CSV reports, and the analysis driver that
//! produces them.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bootstrap::{bootstrap_ci, targets, BootstrapError, BootstrapResult, TargetKind};
use crate::config::AnalysisConfig;
use crate::dataset::LongitudinalDataset;
use crate::estimators::{estimate, EstimationError, EstimatorResult};
use crate::simulate::{monte_carlo_truth, SimulationError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("estimator `{estimator}`: {source}")]
    Estimation {
        estimator: String,
        source: EstimationError,
    },
    #[error("estimator `{estimator}`: {source}")]
    Bootstrap {
        estimator: String,
        source: BootstrapError,
    },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub config_sha256: String,
    pub data_sha256: String,
    /// Bootstrap master seed, when intervals were computed.
    pub seed: Option<u64>,
    pub n_individuals: usize,
    pub n_rows: usize,
    pub tau: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSection {
    #[serde(flatten)]
    pub result: EstimatorResult,
    pub bootstrap: Option<BootstrapResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub run: RunInfo,
    pub estimators: Vec<EstimatorSection>,
}

fn kind_str(k: TargetKind) -> &'static str {
    match k {
        TargetKind::Psi => "psi",
        TargetKind::Difference => "difference",
        TargetKind::Ratio => "ratio",
    }
}

impl EstimateReport {
    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One line per estimator and target.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ReportError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "estimator", "kind", "target", "label", "t_star", "estimate", "lower", "upper",
            "level", "replicates", "failed_replicates",
        ])?;
        for sec in &self.estimators {
            for (j, (target, value)) in targets(&sec.result).iter().enumerate() {
                let ci = match &sec.bootstrap {
                    Some(b) => [
                        b.intervals[j].lower.to_string(),
                        b.intervals[j].upper.to_string(),
                        b.level.to_string(),
                        b.replicates.to_string(),
                        b.n_failed.to_string(),
                    ],
                    None => Default::default(),
                };
                let [lower, upper, level, reps, failed] = ci;
                out.write_record([
                    sec.result.estimator.clone(),
                    sec.result.kind.as_str().to_string(),
                    kind_str(target.kind).to_string(),
                    target.label.clone(),
                    target.t_star.to_string(),
                    value.to_string(),
                    lower,
                    upper,
                    level,
                    reps,
                    failed,
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs every configured estimator (and the bootstrap unless disabled) on
/// `d`.
pub fn analyze(
    cfg: &AnalysisConfig,
    d: &LongitudinalDataset,
    config_sha256: &str,
    data_sha256: &str,
) -> Result<EstimateReport, ReportError> {
    let strategies = cfg.strategies();
    let t_stars = cfg.t_stars();
    let contrasts = cfg.contrast_pairs();
    let estimators = cfg
        .estimator_configs()
        .map_err(|e| ReportError::Config(e.to_string()))?;
    let settings = cfg.bootstrap.settings();
    let mut sections = Vec::with_capacity(estimators.len());
    for est in &estimators {
        let result = estimate(d, &strategies, est, &t_stars, &contrasts).map_err(|source| {
            ReportError::Estimation {
                estimator: est.name.clone(),
                source,
            }
        })?;
        let bootstrap = if cfg.bootstrap.enabled {
            log::info!("bootstrap for `{}`: {} replicates", est.name, settings.replicates);
            Some(
                bootstrap_ci(d, &strategies, est, &t_stars, &contrasts, &result, &settings)
                    .map_err(|source| ReportError::Bootstrap {
                        estimator: est.name.clone(),
                        source,
                    })?,
            )
        } else {
            None
        };
        sections.push(EstimatorSection { result, bootstrap });
    }
    Ok(EstimateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        run: RunInfo {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: config_sha256.to_string(),
            data_sha256: data_sha256.to_string(),
            seed: cfg.bootstrap.enabled.then_some(settings.seed),
            n_individuals: d.n_individuals(),
            n_rows: d.n_rows(),
            tau: d.tau(),
        },
        estimators: sections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthValue {
    pub strategy: String,
    pub t_star: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub samples: usize,
    pub values: Vec<TruthValue>,
}

impl TruthReport {
    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Monte Carlo truth for the configured strategies and outcome times.
pub fn truth(
    cfg: &AnalysisConfig,
    samples: usize,
    seed: u64,
    config_sha256: &str,
) -> Result<TruthReport, ReportError> {
    let strategies = cfg.strategies();
    let t_stars = cfg.t_stars();
    let v = monte_carlo_truth(&cfg.simulation, &strategies, &t_stars, samples, seed)?;
    let mut values = Vec::new();
    for (s, g) in strategies.iter().enumerate() {
        for (k, &t) in t_stars.iter().enumerate() {
            values.push(TruthValue {
                strategy: g.label.clone(),
                t_star: t,
                value: v[s][k],
            });
        }
    }
    Ok(TruthReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_sha256: config_sha256.to_string(),
        seed,
        samples,
        values,
    })
}
