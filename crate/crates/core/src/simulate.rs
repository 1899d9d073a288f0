//! Simulated studies with treatment-confounder feedback, informative outcome
//! measurement, optional loss to follow-up and deaths, plus Monte Carlo truth
//! under intervention and the replication study driver.
//!
//! Per interval the order is `L_t, A_t, D_t, C_t, R_t, Y_t`. A latent
//! baseline `U ~ N(0, 1)` drives both `L` and `Y`, so `L` confounds
//! treatment and measurement. `Y` has no treatment terms and death depends
//! on `L_0` only, which makes every contrast between strategies exactly null.

use std::io::Write;
use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{
    bootstrap_with, derive_seed, run_indexed, stream_rng, targets, BootstrapError,
    BootstrapSettings, Target, TargetKind,
};
use crate::dataset::{LongitudinalDataset, Record, VariableSchema};
use crate::estimators::{default_contrasts, estimate, EstimationError, EstimatorConfig};
use crate::glm::{expit, Family};
use crate::strategy::{grace_indicator, StrategySpec};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("guard rail: {what} at t={t} is {value:.3}, outside [{lo}, {hi}]")]
    GuardRailViolation {
        what: &'static str,
        t: u32,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineLaw {
    /// Logit of `Pr(L_0 = 1)`.
    pub l0_intercept: f64,
    pub l0_u: f64,
    /// Logit of `Pr(A_0 = 1 | L_0)`.
    pub a0_intercept: f64,
    pub a0_l0: f64,
}

impl Default for BaselineLaw {
    fn default() -> Self {
        BaselineLaw {
            l0_intercept: 0.0,
            l0_u: 0.8,
            a0_intercept: 0.0,
            a0_l0: 0.5,
        }
    }
}

/// `logit Pr(L_t = 1) = intercept + lag L_{t-1} + treated T_{t-1} + u U`,
/// where `T_{t-1}` is 1 while the initiated medication is being taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateLaw {
    pub intercept: f64,
    pub lag: f64,
    pub treated: f64,
    pub u: f64,
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw {
            intercept: -0.3,
            lag: 0.8,
            treated: -0.8,
            u: 0.8,
        }
    }
}

/// `logit Pr(A_t = 1) = intercept + a0 A_0 + l L_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdherenceLaw {
    pub intercept: f64,
    pub a0: f64,
    pub l: f64,
}

impl Default for AdherenceLaw {
    fn default() -> Self {
        AdherenceLaw {
            intercept: 1.0,
            a0: 0.3,
            l: -0.9,
        }
    }
}

/// `logit Pr(D_t = 1) = intercept + l0 L_0 + t t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeathLaw {
    pub enabled: bool,
    pub intercept: f64,
    pub l0: f64,
    pub t: f64,
}

impl Default for DeathLaw {
    fn default() -> Self {
        DeathLaw {
            enabled: true,
            intercept: -3.25,
            l0: 0.6,
            t: 0.0,
        }
    }
}

/// `logit Pr(C_t = 1) = intercept + l L_t`; off by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensoringLaw {
    pub enabled: bool,
    pub intercept: f64,
    pub l: f64,
}

impl Default for CensoringLaw {
    fn default() -> Self {
        CensoringLaw {
            enabled: false,
            intercept: -4.0,
            l: 0.5,
        }
    }
}

/// `logit Pr(R_t = 1) = intercept + a A_t + a0 A_0 + l L_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementLaw {
    pub intercept: f64,
    pub a: f64,
    pub a0: f64,
    pub l: f64,
}

impl Default for MeasurementLaw {
    fn default() -> Self {
        MeasurementLaw {
            intercept: -1.0,
            a: 0.5,
            a0: 0.2,
            l: -0.6,
        }
    }
}

/// Mean `intercept + l0 L_0 + t t + t2 t^2 + l0_t L_0 t + u U`; linear
/// outcomes add `N(0, sd^2)` noise, logistic outcomes are Bernoulli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeLaw {
    pub family: Family,
    pub intercept: f64,
    pub l0: f64,
    pub t: f64,
    pub t2: f64,
    pub l0_t: f64,
    pub u: f64,
    pub sd: f64,
}

impl Default for OutcomeLaw {
    fn default() -> Self {
        OutcomeLaw {
            family: Family::Linear,
            intercept: 0.0,
            l0: 1.0,
            t: 0.1,
            t2: 0.0,
            l0_t: 0.05,
            u: 0.3,
            sd: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardRails {
    pub adherence: [f64; 2],
    pub missingness: [f64; 2],
    /// Intervals with fewer rows at risk are not checked.
    pub min_at_risk: usize,
}

impl Default for GuardRails {
    fn default() -> Self {
        GuardRails {
            adherence: [0.40, 0.95],
            missingness: [0.40, 0.95],
            min_at_risk: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub tau: u32,
    pub grace_length: u32,
    pub seed: u64,
    pub baseline: BaselineLaw,
    pub covariate: CovariateLaw,
    pub adherence: AdherenceLaw,
    pub death: DeathLaw,
    pub censoring: CensoringLaw,
    pub measurement: MeasurementLaw,
    pub outcome: OutcomeLaw,
    pub guard_rails: GuardRails,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            tau: 24,
            grace_length: 2,
            seed: 1,
            baseline: BaselineLaw::default(),
            covariate: CovariateLaw::default(),
            adherence: AdherenceLaw::default(),
            death: DeathLaw::default(),
            censoring: CensoringLaw::default(),
            measurement: MeasurementLaw::default(),
            outcome: OutcomeLaw::default(),
            guard_rails: GuardRails::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.tau == 0 {
            return bad("tau must be positive".into());
        }
        if self.grace_length < 1 || self.grace_length > self.tau {
            return bad(format!("grace length {} outside 1..={}", self.grace_length, self.tau));
        }
        if !(self.outcome.sd >= 0.0) {
            return bad("outcome sd must be non-negative".into());
        }
        for (name, [lo, hi]) in [
            ("adherence", self.guard_rails.adherence),
            ("missingness", self.guard_rails.missingness),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return bad(format!("{name} guard rail [{lo}, {hi}] is not a sub-interval of [0, 1]"));
            }
        }
        Ok(())
    }

    /// The two grace-period strategies compared in the study: initiate arm 0
    /// and initiate arm 1, each with this config's grace length.
    pub fn strategies(&self) -> Vec<StrategySpec> {
        vec![
            StrategySpec::new("g0", 0, self.grace_length),
            StrategySpec::new("g1", 1, self.grace_length),
        ]
    }
}

pub fn schema() -> VariableSchema {
    VariableSchema {
        id_column: "id".into(),
        time_column: "time".into(),
        treatment_column: "a".into(),
        covariate_columns: vec!["l0".into(), "l".into()],
        measured_column: "r".into(),
        outcome_column: "y".into(),
        censor_column: "c".into(),
        death_column: "d".into(),
        baseline_covariates: vec!["l0".into()],
        v_columns: vec!["l0".into()],
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// What one simulated person looks like under an (optional) intervention.
struct PersonPath {
    records: Vec<Record>,
    /// `Y_t` for `t = 1..` while alive, measured or not.
    outcomes: Vec<f64>,
    death_time: Option<u32>,
}

/// Simulates one person. Every draw is made in a fixed order whatever the
/// intervention, so runs under different strategies share random numbers.
fn simulate_person(
    cfg: &SimConfig,
    id: &str,
    rng: &mut ChaCha8Rng,
    intervention: Option<&StrategySpec>,
    horizon: u32,
) -> PersonPath {
    let u: f64 = rng.sample(StandardNormal);
    let b = &cfg.baseline;
    let l0 = bernoulli(rng, expit(b.l0_intercept + b.l0_u * u));
    let natural_a0 = bernoulli(rng, expit(b.a0_intercept + b.a0_l0 * l0 as f64));
    let a0 = intervention.map_or(natural_a0, |g| g.arm);
    let mut records = vec![Record {
        id: id.to_string(),
        t: 0,
        treatment: a0,
        covariates: vec![l0 as f64, l0 as f64],
        measured: 0,
        outcome: None,
        censored: 0,
        died: 0,
    }];
    let mut outcomes = Vec::new();
    let mut history = vec![1u8];
    let mut l_prev = l0;
    let mut on_prev = 1u8;
    let mut death_time = None;
    for t in 1..=horizon {
        let c = &cfg.covariate;
        let l = bernoulli(
            rng,
            expit(c.intercept + c.lag * l_prev as f64 + c.treated * on_prev as f64 + c.u * u),
        );
        let ad = &cfg.adherence;
        let natural_a = bernoulli(rng, expit(ad.intercept + ad.a0 * a0 as f64 + ad.l * l as f64));
        let a = match intervention {
            Some(g) => {
                let flagged = match g.contraindication.as_deref() {
                    Some("l") => l == 1,
                    Some("l0") => l0 == 1,
                    _ => false,
                };
                if grace_indicator(&history, flagged, g.grace_length) == 1 {
                    1
                } else {
                    natural_a
                }
            }
            None => natural_a,
        };
        let dl = &cfg.death;
        let died = bernoulli(rng, expit(dl.intercept + dl.l0 * l0 as f64 + dl.t * t as f64));
        let died = u8::from(dl.enabled) & died;
        let cl = &cfg.censoring;
        let censored = bernoulli(rng, expit(cl.intercept + cl.l * l as f64));
        let censored = u8::from(cl.enabled && intervention.is_none()) & censored & (1 - died);
        let m = &cfg.measurement;
        let measured = bernoulli(
            rng,
            expit(m.intercept + m.a * a as f64 + m.a0 * a0 as f64 + m.l * l as f64),
        );
        let o = &cfg.outcome;
        let tf = t as f64;
        let mean = o.intercept
            + o.l0 * l0 as f64
            + o.t * tf
            + o.t2 * tf * tf
            + o.l0_t * l0 as f64 * tf
            + o.u * u;
        let noise: f64 = rng.sample(StandardNormal);
        let uy: f64 = rng.random();
        let y = match o.family {
            Family::Linear => mean + o.sd * noise,
            Family::Logistic => f64::from(u8::from(uy < expit(mean))),
        };
        let measured = measured & (1 - died) & (1 - censored);
        records.push(Record {
            id: id.to_string(),
            t,
            treatment: a,
            covariates: vec![l0 as f64, l as f64],
            measured,
            outcome: (measured == 1).then_some(y),
            censored,
            died,
        });
        if died == 1 {
            death_time = Some(t);
            break;
        }
        outcomes.push(y);
        if censored == 1 {
            break;
        }
        history.push(a);
        l_prev = l;
        on_prev = a;
    }
    PersonPath {
        records,
        outcomes,
        death_time,
    }
}

/// Observed data; person `i` uses generator stream `i + 1` of `cfg.seed`.
pub fn generate(cfg: &SimConfig) -> Result<LongitudinalDataset, SimulationError> {
    cfg.validate()?;
    let width = cfg.n.to_string().len();
    let mut records = Vec::with_capacity(cfg.n * (cfg.tau as usize + 1));
    for i in 0..cfg.n {
        let mut rng = stream_rng(cfg.seed, i as u64 + 1);
        let id = format!("s{:0width$}", i + 1);
        records.extend(simulate_person(cfg, &id, &mut rng, None, cfg.tau).records);
    }
    let d = LongitudinalDataset::from_records(schema(), records)
        .map_err(|e| SimulationError::InvalidConfig(format!("generated data invalid: {e}")))?;
    check_guard_rails(cfg, &d)?;
    Ok(d)
}

/// Per-interval marginals among rows alive and uncensored at `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marginals {
    pub t: u32,
    pub at_risk: usize,
    pub adherence: f64,
    pub missingness: f64,
}

pub fn marginals(d: &LongitudinalDataset) -> Vec<Marginals> {
    let tau = d.tau() as usize;
    let mut n = vec![0usize; tau + 1];
    let mut a = vec![0usize; tau + 1];
    let mut r = vec![0usize; tau + 1];
    for row in 0..d.n_rows() {
        let t = d.time()[row] as usize;
        if t == 0 || d.died()[row] == 1 || d.censored()[row] == 1 {
            continue;
        }
        n[t] += 1;
        a[t] += d.treatment()[row] as usize;
        r[t] += d.measured()[row] as usize;
    }
    (1..=tau)
        .map(|t| Marginals {
            t: t as u32,
            at_risk: n[t],
            adherence: a[t] as f64 / n[t].max(1) as f64,
            missingness: 1.0 - r[t] as f64 / n[t].max(1) as f64,
        })
        .collect()
}

pub fn death_fraction(d: &LongitudinalDataset) -> f64 {
    let dead = (0..d.n_individuals())
        .filter(|&p| d.death_time(p).is_some())
        .count();
    dead as f64 / d.n_individuals() as f64
}

fn check_guard_rails(cfg: &SimConfig, d: &LongitudinalDataset) -> Result<(), SimulationError> {
    let g = &cfg.guard_rails;
    for m in marginals(d) {
        if m.at_risk < g.min_at_risk {
            continue;
        }
        for (what, value, [lo, hi]) in [
            ("adherence", m.adherence, g.adherence),
            ("missingness", m.missingness, g.missingness),
        ] {
            if value < lo || value > hi {
                return Err(SimulationError::GuardRailViolation {
                    what,
                    t: m.t,
                    value,
                    lo,
                    hi,
                });
            }
        }
    }
    Ok(())
}

/// Monte Carlo `E[Y^g_{t*} | D_{t*} = 0]` for every strategy and outcome
/// time (`values[strategy][k]` for `t_stars[k]`), simulating with treatment
/// forced at grace ends, censoring eliminated and the outcome always
/// measured. Strategies share random numbers person by person.
pub fn monte_carlo_truth(
    cfg: &SimConfig,
    strategies: &[StrategySpec],
    t_stars: &[u32],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SimulationError> {
    cfg.validate()?;
    if n_mc < 1000 {
        return Err(SimulationError::InvalidConfig("truth needs at least 1000 samples".into()));
    }
    if let Some(t) = t_stars.iter().find(|&&t| t < 1 || t > cfg.tau) {
        return Err(SimulationError::InvalidConfig(format!("outcome time {t} outside 1..={}", cfg.tau)));
    }
    let horizon = t_stars.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(strategies.len());
    for g in strategies {
        let mut sums = vec![0.0; t_stars.len()];
        let mut counts = vec![0usize; t_stars.len()];
        for i in 0..n_mc {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let path = simulate_person(cfg, "mc", &mut rng, Some(g), horizon);
            for (k, &t) in t_stars.iter().enumerate() {
                if path.death_time.is_none_or(|dt| dt > t) {
                    sums[k] += path.outcomes[t as usize - 1];
                    counts[k] += 1;
                }
            }
        }
        out.push(
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
                .collect(),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub replicates: usize,
    pub t_stars: Vec<u32>,
    pub truth_samples: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    /// Bootstrap every replicate; off means no coverage or widths.
    pub intervals: bool,
    /// Replicate count and level; seeds and workers are set per replicate.
    pub bootstrap: BootstrapSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 200,
            t_stars: vec![6, 12, 18, 24],
            truth_samples: 200_000,
            seed: 2024,
            workers: None,
            intervals: true,
            bootstrap: BootstrapSettings::default(),
        }
    }
}

/// One estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub estimator: String,
    pub target: Target,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Bias, empirical SE and coverage of one estimator for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub target: Target,
    pub truth: f64,
    pub n_replicates: usize,
    pub mean: f64,
    pub bias: f64,
    /// Monte Carlo SE of the bias.
    pub bias_se: f64,
    pub empirical_se: f64,
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub truth: Vec<(Target, f64)>,
    pub rows: Vec<ReplicateRow>,
    pub summary: Vec<SummaryRow>,
    /// Per estimator, the replicates whose point estimate failed.
    pub failures: Vec<(String, Vec<usize>)>,
}

impl StudyResult {
    pub fn summary_for(&self, estimator: &str, kind: TargetKind, label: &str, t_star: u32) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| {
            s.estimator == estimator
                && s.target.kind == kind
                && s.target.label == label
                && s.target.t_star == t_star
        })
    }
}

fn truth_targets(
    strategies: &[StrategySpec],
    t_stars: &[u32],
    values: &[Vec<f64>],
) -> Vec<(Target, f64)> {
    let mut out = Vec::new();
    for (k, &t) in t_stars.iter().enumerate() {
        for (s, g) in strategies.iter().enumerate() {
            out.push((
                Target {
                    kind: TargetKind::Psi,
                    label: g.label.clone(),
                    t_star: t,
                },
                values[s][k],
            ));
        }
        for (g1, g0) in default_contrasts(strategies) {
            let i1 = strategies.iter().position(|s| s.label == g1).expect("known label");
            let i0 = strategies.iter().position(|s| s.label == g0).expect("known label");
            out.push((
                Target {
                    kind: TargetKind::Difference,
                    label: format!("{g1} - {g0}"),
                    t_star: t,
                },
                values[i1][k] - values[i0][k],
            ));
        }
    }
    out
}

fn summarize(
    estimator: &str,
    target: &Target,
    truth: f64,
    rows: &[&ReplicateRow],
) -> SummaryRow {
    let k = rows.len() as f64;
    let mean = rows.iter().map(|r| r.estimate).sum::<f64>() / k;
    let var = rows.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let sd = var.sqrt();
    let with_ci: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.lower?, r.upper?)))
        .collect();
    let (coverage, mean_width) = if with_ci.is_empty() {
        (None, None)
    } else {
        let n = with_ci.len() as f64;
        let covered = with_ci.iter().filter(|(l, u)| *l <= truth && truth <= *u).count();
        let width = with_ci.iter().map(|(l, u)| u - l).sum::<f64>() / n;
        (Some(covered as f64 / n), Some(width))
    };
    SummaryRow {
        estimator: estimator.to_string(),
        target: target.clone(),
        truth,
        n_replicates: rows.len(),
        mean,
        bias: mean - truth,
        bias_se: sd / k.sqrt(),
        empirical_se: sd,
        coverage,
        mean_width,
    }
}

/// Replication study: replicate `r` simulates with seed
/// `derive_seed(study.seed, r + 1)`, runs every estimator, and bootstraps
/// with seed `derive_seed(dataset seed, 0)`. Truth uses
/// `derive_seed(study.seed, 0)`.
pub fn run_study(
    sim: &SimConfig,
    estimators: &[EstimatorConfig],
    study: &StudyConfig,
) -> Result<StudyResult, SimulationError> {
    sim.validate()?;
    let strategies = sim.strategies();
    let contrasts = default_contrasts(&strategies);
    let t_stars = &study.t_stars;
    let truth_values = monte_carlo_truth(
        sim,
        &strategies,
        t_stars,
        study.truth_samples,
        derive_seed(study.seed, 0),
    )?;
    let truth = truth_targets(&strategies, t_stars, &truth_values);

    type Outcome = Vec<Result<Vec<ReplicateRow>, String>>;
    let per_replicate: Vec<Result<Outcome, SimulationError>> =
        run_indexed(study.replicates, study.workers, |r| {
            let mut cfg = sim.clone();
            cfg.seed = derive_seed(study.seed, r as u64 + 1);
            let d = generate(&cfg)?;
            let mut outcome = Vec::with_capacity(estimators.len());
            for est in estimators {
                let point = match estimate(&d, &strategies, est, t_stars, &contrasts) {
                    Ok(p) => p,
                    Err(e) => {
                        outcome.push(Err(e.to_string()));
                        continue;
                    }
                };
                let point_targets = targets(&point);
                let intervals = match study.intervals.then_some(&study.bootstrap) {
                    Some(b) => {
                        let settings = BootstrapSettings {
                            seed: derive_seed(cfg.seed, 0),
                            workers: Some(1),
                            ..b.clone()
                        };
                        let res = bootstrap_with(&d, &point_targets, &settings, |rd| {
                            let res = estimate(rd, &strategies, est, t_stars, &contrasts)?;
                            if !res.all_converged() {
                                return Err(EstimationError::InvalidConfig("not converged".into()));
                            }
                            Ok(targets(&res))
                        });
                        match res {
                            Ok(res) => Some(res),
                            Err(e) => {
                                outcome.push(Err(e.to_string()));
                                continue;
                            }
                        }
                    }
                    None => None,
                };
                let rows = point_targets
                    .iter()
                    .enumerate()
                    .map(|(j, (target, value))| {
                        let iv = intervals.as_ref().map(|b| &b.intervals[j]);
                        ReplicateRow {
                            replicate: r,
                            estimator: est.name.clone(),
                            target: target.clone(),
                            estimate: *value,
                            lower: iv.map(|i| i.lower),
                            upper: iv.map(|i| i.upper),
                        }
                    })
                    .collect();
                outcome.push(Ok(rows));
            }
            Ok(outcome)
        })?;

    let mut rows = Vec::new();
    let mut failures: Vec<(String, Vec<usize>)> =
        estimators.iter().map(|e| (e.name.clone(), Vec::new())).collect();
    for (r, rep) in per_replicate.into_iter().enumerate() {
        for (e, res) in rep?.into_iter().enumerate() {
            match res {
                Ok(mut v) => rows.append(&mut v),
                Err(msg) => {
                    log::warn!("replicate {r}, estimator {}: {msg}", estimators[e].name);
                    failures[e].1.push(r);
                }
            }
        }
    }
    let mut summary = Vec::new();
    for est in estimators {
        for (target, value) in &truth {
            let matching: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| r.estimator == est.name && &r.target == target)
                .collect();
            if matching.len() >= 2 {
                summary.push(summarize(&est.name, target, *value, &matching));
            }
        }
    }
    Ok(StudyResult {
        truth,
        rows,
        summary,
        failures,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn kind_str(k: TargetKind) -> &'static str {
    match k {
        TargetKind::Psi => "psi",
        TargetKind::Difference => "difference",
        TargetKind::Ratio => "ratio",
    }
}

impl StudyResult {
    /// One line per estimator, target and outcome time.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "estimator", "target", "label", "t_star", "truth", "n_replicates", "mean", "bias",
            "bias_se", "empirical_se", "coverage", "mean_width",
        ])?;
        for s in &self.summary {
            out.write_record([
                s.estimator.clone(),
                kind_str(s.target.kind).to_string(),
                s.target.label.clone(),
                s.target.t_star.to_string(),
                format!("{}", s.truth),
                s.n_replicates.to_string(),
                format!("{}", s.mean),
                format!("{}", s.bias),
                format!("{}", s.bias_se),
                format!("{}", s.empirical_se),
                fmt_opt(s.coverage),
                fmt_opt(s.mean_width),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Bias, SE and coverage side by side per outcome time for each
    /// estimator and target, estimates and SEs multiplied by 10.
    pub fn write_table_csv<W: Write>(&self, w: W, t_stars: &[u32]) -> Result<(), SimulationError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["estimator".to_string(), "target".to_string(), "label".to_string()];
        for t in t_stars {
            header.push(format!("bias_x10_t{t}"));
            header.push(format!("se_x10_t{t}"));
            header.push(format!("coverage_t{t}"));
        }
        out.write_record(&header)?;
        let mut keys: Vec<(String, TargetKind, String)> = Vec::new();
        for s in &self.summary {
            let key = (s.estimator.clone(), s.target.kind, s.target.label.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (est, kind, label) in keys {
            let mut line = vec![est.clone(), kind_str(kind).to_string(), label.clone()];
            for &t in t_stars {
                match self.summary_for(&est, kind, &label, t) {
                    Some(s) => {
                        line.push(format!("{:.2}", 10.0 * s.bias));
                        line.push(format!("{:.2}", 10.0 * s.empirical_se));
                        line.push(s.coverage.map(|c| format!("{c:.3}")).unwrap_or_default());
                    }
                    None => line.extend([String::new(), String::new(), String::new()]),
                }
            }
            out.write_record(&line)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Every replicate estimate with its interval.
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "estimator", "target", "label", "t_star", "estimate", "lower", "upper"])?;
        for r in &self.rows {
            out.write_record([
                r.replicate.to_string(),
                r.estimator.clone(),
                kind_str(r.target.kind).to_string(),
                r.target.label.clone(),
                r.target.t_star.to_string(),
                format!("{}", r.estimate),
                fmt_opt(r.lower),
                fmt_opt(r.upper),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_table_path(&self, path: &Path, t_stars: &[u32]) -> Result<(), SimulationError> {
        self.write_table_csv(std::fs::File::create(path)?, t_stars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n: 300,
            tau: 6,
            ..SimConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let mut other = small();
        other.seed = 2;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn death_and_censoring_toggles() {
        let mut cfg = small();
        cfg.death.enabled = false;
        let d = generate(&cfg).unwrap();
        assert_eq!(death_fraction(&d), 0.0);
        assert!(d.censored().iter().all(|&c| c == 0));
        cfg.censoring.enabled = true;
        cfg.censoring.intercept = -2.0;
        let d = generate(&cfg).unwrap();
        assert!(d.censored().contains(&1));
    }

    #[test]
    fn guard_rails_fire() {
        let mut cfg = small();
        cfg.adherence.intercept = 6.0;
        assert!(matches!(
            generate(&cfg),
            Err(SimulationError::GuardRailViolation { what: "adherence", .. })
        ));
    }

    #[test]
    fn truth_contrast_is_null_with_common_random_numbers() {
        let cfg = small();
        let v = monte_carlo_truth(&cfg, &cfg.strategies(), &[3, 6], 2000, 5).unwrap();
        assert_eq!(v[0], v[1]);
        assert!(monte_carlo_truth(&cfg, &cfg.strategies(), &[3], 10, 5).is_err());
    }

    #[test]
    fn zero_replicates_give_header_only() {
        let cfg = small();
        let study = StudyConfig {
            replicates: 0,
            t_stars: vec![3],
            truth_samples: 1000,
            intervals: false,
            ..StudyConfig::default()
        };
        let est = EstimatorConfig::simulation_default(crate::estimators::EstimatorKind::Nonstacked);
        let res = run_study(&cfg, &[est], &study).unwrap();
        let mut buf = Vec::new();
        res.write_table_csv(&mut buf, &[3]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
