//! Person-level nonparametric bootstrap with percentile intervals.
//!
//! Replicate `b` (1-based) draws its resample from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `b`, so its estimate
//! depends only on `(seed, b)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{resample_ids, LongitudinalDataset};
use crate::estimators::{estimate, EstimationError, EstimatorConfig, EstimatorResult};
use crate::strategy::StrategySpec;
use crate::weights::quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("invalid bootstrap settings: {0}")]
    InvalidSettings(String),
    #[error("{failed} of {replicates} bootstrap replicates failed (limit 10%)")]
    TooManyFailures { failed: usize, replicates: usize },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Generator for replicate `index` under `master_seed`.
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A child seed for replicate `index`, for nesting seeded procedures.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    stream_rng(master_seed, index).next_u64()
}

/// Runs `f(b)` for `b` in `0..n`, in parallel when allowed, and returns the
/// results in index order. `workers = None` uses the ambient rayon pool.
pub fn run_indexed<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>, BootstrapError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match workers {
        Some(0) => Err(BootstrapError::InvalidSettings("workers must be positive".into())),
        Some(1) => Ok((0..n).map(f).collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| BootstrapError::Pool(e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..n).into_par_iter().map(f).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_replicates() -> usize {
    250
}

fn default_level() -> f64 {
    0.95
}

fn default_seed() -> u64 {
    1
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicates: default_replicates(),
            level: default_level(),
            seed: default_seed(),
            workers: None,
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.replicates < 2 {
            return Err(BootstrapError::InvalidSettings("need at least 2 replicates".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(BootstrapError::InvalidSettings(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Psi,
    Difference,
    Ratio,
}

/// A scalar reported by an estimator: `psi` of a strategy, or a contrast
/// whose label is `g1 - g0` / `g1 / g0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub kind: TargetKind,
    pub label: String,
    pub t_star: u32,
}

pub fn targets(res: &EstimatorResult) -> Vec<(Target, f64)> {
    let mut out: Vec<(Target, f64)> = res
        .estimates
        .iter()
        .map(|e| {
            let t = Target {
                kind: TargetKind::Psi,
                label: e.strategy.clone(),
                t_star: e.t_star,
            };
            (t, e.psi)
        })
        .collect();
    for c in &res.contrasts {
        out.push((
            Target {
                kind: TargetKind::Difference,
                label: format!("{} - {}", c.g1, c.g0),
                t_star: c.t_star,
            },
            c.difference,
        ));
        if let Some(r) = c.ratio {
            out.push((
                Target {
                    kind: TargetKind::Ratio,
                    label: format!("{} / {}", c.g1, c.g0),
                    t_star: c.t_star,
                },
                r,
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInterval {
    pub target: Target,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Estimates from the successful replicates, in replicate order.
    pub replicates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub level: f64,
    pub n_failed: usize,
    pub intervals: Vec<TargetInterval>,
}

impl BootstrapResult {
    pub fn interval(&self, kind: TargetKind, label: &str, t_star: u32) -> Option<&TargetInterval> {
        self.intervals
            .iter()
            .find(|i| i.target.kind == kind && i.target.label == label && i.target.t_star == t_star)
    }
}

/// Bootstrap around the point values `point`; `replicate` reruns the whole
/// analysis on a resampled dataset. A replicate fails when it errors or does
/// not report every point target with a finite value.
pub fn bootstrap_with<F>(
    d: &LongitudinalDataset,
    point: &[(Target, f64)],
    settings: &BootstrapSettings,
    replicate: F,
) -> Result<BootstrapResult, BootstrapError>
where
    F: Fn(&LongitudinalDataset) -> Result<Vec<(Target, f64)>, EstimationError> + Sync + Send,
{
    settings.validate()?;
    let b_total = settings.replicates;
    let draws = run_indexed(b_total, settings.workers, |i| {
        let mut rng = stream_rng(settings.seed, i as u64 + 1);
        let resampled = resample_ids(d, &mut rng);
        let values = replicate(&resampled).ok()?;
        point
            .iter()
            .map(|(t, _)| {
                values
                    .iter()
                    .find(|(u, _)| u == t)
                    .map(|(_, v)| *v)
                    .filter(|v| v.is_finite())
            })
            .collect::<Option<Vec<f64>>>()
    })?;
    let n_failed = draws.iter().filter(|r| r.is_none()).count();
    if n_failed * 10 > b_total {
        return Err(BootstrapError::TooManyFailures {
            failed: n_failed,
            replicates: b_total,
        });
    }
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let alpha = 1.0 - settings.level;
    let intervals = point
        .iter()
        .enumerate()
        .map(|(j, (target, estimate))| {
            let values: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            let lower = quantile(&values, alpha / 2.0).unwrap_or(f64::NAN);
            let upper = quantile(&values, 1.0 - alpha / 2.0).unwrap_or(f64::NAN);
            debug_assert!(!(lower > upper));
            TargetInterval {
                target: target.clone(),
                estimate: *estimate,
                lower,
                upper,
                replicates: values,
            }
        })
        .collect();
    Ok(BootstrapResult {
        replicates: b_total,
        level: settings.level,
        n_failed,
        intervals,
    })
}

/// Percentile intervals for every estimate and contrast of `point`, refitting
/// all nuisance and outcome models in each replicate. Non-converged
/// replicates count as failures.
pub fn bootstrap_ci(
    d: &LongitudinalDataset,
    strategies: &[StrategySpec],
    cfg: &EstimatorConfig,
    t_stars: &[u32],
    contrasts: &[(String, String)],
    point: &EstimatorResult,
    settings: &BootstrapSettings,
) -> Result<BootstrapResult, BootstrapError> {
    bootstrap_with(d, &targets(point), settings, |resampled| {
        let res = estimate(resampled, strategies, cfg, t_stars, contrasts)?;
        if !res.all_converged() {
            return Err(EstimationError::InvalidConfig("replicate did not converge".into()));
        }
        Ok(targets(&res))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Record, VariableSchema};

    fn schema() -> VariableSchema {
        VariableSchema {
            id_column: "id".into(),
            time_column: "time".into(),
            treatment_column: "a".into(),
            covariate_columns: vec!["x".into()],
            measured_column: "r".into(),
            outcome_column: "y".into(),
            censor_column: "c".into(),
            death_column: "d".into(),
            baseline_covariates: vec![],
            v_columns: vec![],
        }
    }

    fn data(n: usize) -> LongitudinalDataset {
        let mut recs = Vec::new();
        for i in 0..n {
            for t in 0..2 {
                recs.push(Record {
                    id: format!("p{i}"),
                    t,
                    treatment: 1,
                    covariates: vec![i as f64],
                    measured: u8::from(t == 1),
                    outcome: (t == 1).then_some(i as f64),
                    censored: 0,
                    died: 0,
                });
            }
        }
        LongitudinalDataset::from_records(schema(), recs).unwrap()
    }

    fn mean_target(d: &LongitudinalDataset) -> Result<Vec<(Target, f64)>, EstimationError> {
        let x = d.covariate("x").unwrap();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        Ok(vec![(
            Target {
                kind: TargetKind::Psi,
                label: "mean".into(),
                t_star: 1,
            },
            m,
        )])
    }

    fn settings(b: usize, workers: Option<usize>) -> BootstrapSettings {
        BootstrapSettings {
            replicates: b,
            level: 0.95,
            seed: 17,
            workers,
        }
    }

    #[test]
    fn constant_statistic_gives_zero_width() {
        let d = data(20);
        let point = vec![(
            Target {
                kind: TargetKind::Psi,
                label: "c".into(),
                t_star: 1,
            },
            3.0,
        )];
        let res = bootstrap_with(&d, &point, &settings(50, Some(1)), |_| Ok(point.clone())).unwrap();
        assert_eq!(res.intervals[0].lower, 3.0);
        assert_eq!(res.intervals[0].upper, 3.0);
    }

    #[test]
    fn bounds_are_order_statistics() {
        let d = data(30);
        let point = mean_target(&d).unwrap();
        let res = bootstrap_with(&d, &point, &settings(1000, None), mean_target).unwrap();
        let mut v = res.intervals[0].replicates.clone();
        v.sort_by(f64::total_cmp);
        assert_eq!(res.intervals[0].lower, v[24]);
        assert_eq!(res.intervals[0].upper, v[974]);
        assert!(res.intervals[0].lower <= res.intervals[0].upper);
    }

    #[test]
    fn replicates_depend_only_on_seed_and_index() {
        let d = data(25);
        let point = mean_target(&d).unwrap();
        let a = bootstrap_with(&d, &point, &settings(40, Some(1)), mean_target).unwrap();
        let b = bootstrap_with(&d, &point, &settings(60, Some(4)), mean_target).unwrap();
        assert_eq!(a.intervals[0].replicates[..], b.intervals[0].replicates[..40]);
    }

    #[test]
    fn failures_are_counted_and_limited() {
        let d = data(10);
        let point = mean_target(&d).unwrap();
        let flaky = |r: &LongitudinalDataset| {
            // Fails whenever person p0 is not drawn at all.
            if r.ids().iter().any(|id| id == "p0") {
                mean_target(r)
            } else {
                Err(EstimationError::NoSurvivors(1))
            }
        };
        let res = bootstrap_with(&d, &point, &settings(100, Some(2)), flaky);
        assert!(matches!(res, Err(BootstrapError::TooManyFailures { .. })));
        assert!(settings(1, None).validate().is_err());
    }
}
