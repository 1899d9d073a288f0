//! The non-smoothed, non-stacked time-smoothed and stacked time-smoothed IPW
//! estimators, standardization over V and contrasts.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{restrict, DatasetError, LongitudinalDataset, VariableSchema};
use crate::formula::{design_matrix, parse, Formula, FormulaError, Frame, Term};
use crate::glm::{self, Family, FitResult, GlmError};
use crate::strategy::{arms_mutually_exclusive, StrategyError, StrategyRows, StrategySpec};
use crate::weights::{self, compute_weights, WeightDiagnostics, WeightInputs, WeightSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("no survivors at t*={0}")]
    NoSurvivors(u32),
    #[error("no measured outcomes with positive weight for {0}")]
    NoMeasuredOutcomes(String),
    #[error("{model} model: {source}")]
    Fit { model: String, source: GlmError },
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("{0}")]
    Dataset(String),
    #[error("{0}")]
    Strategy(String),
    #[error("ratio contrast at t*={0}: reference mean is not positive")]
    DivisionByZero(u32),
    #[error("unknown strategy `{0}` in contrast")]
    UnknownStrategy(String),
    #[error("positivity violation: {0}")]
    Positivity(String),
}

impl From<DatasetError> for EstimationError {
    fn from(e: DatasetError) -> Self {
        EstimationError::Dataset(e.to_string())
    }
}

impl From<StrategyError> for EstimationError {
    fn from(e: StrategyError) -> Self {
        EstimationError::Strategy(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NonSmoothed,
    Nonstacked,
    Stacked,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::NonSmoothed => "non_smoothed",
            EstimatorKind::Nonstacked => "nonstacked",
            EstimatorKind::Stacked => "stacked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    #[default]
    Fitted,
    ConstantOne,
}

/// Rows used to fit the nuisance models of the stacked slice for `t'`.
/// `SurvivorHistory` uses every row of the individuals alive at `t'` (so
/// with no deaths every slice shares the full-data fits), `ThroughSlice` only
/// their rows up to `t'`. Weights always use history through `t'` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceFitRows {
    #[default]
    SurvivorHistory,
    ThroughSlice,
}

/// Whether the outcome regression runs on per-strategy copies or, for
/// mutually exclusive baseline arms, on each person's own arm only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyMode {
    #[default]
    Auto,
    Copies,
    Shortcut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceModels {
    /// `A_0` given baseline covariates.
    pub baseline: Formula,
    /// Adherence `A_t` on rows at the end of a grace period.
    pub treatment: Formula,
    pub measurement: Formula,
    /// `None`: no censoring model (weight 1 while uncensored).
    pub censoring: Option<Formula>,
    /// May use only `a0`, V columns and `t`.
    pub stabilizer: Formula,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub name: String,
    pub kind: EstimatorKind,
    pub family: Family,
    pub outcome_formula: Formula,
    /// Separate outcome regressions per strategy copy (terms with `z` dropped).
    pub stratify_by_g: bool,
    /// Interacts every outcome term with indicators of each interval.
    pub time_saturated: bool,
    pub truncation: Option<f64>,
    pub q_mode: QMode,
    pub slice_fit_rows: SliceFitRows,
    pub copy_mode: CopyMode,
    pub models: NuisanceModels,
}

impl EstimatorConfig {
    /// Configuration with the model forms used in the simulation study.
    pub fn simulation_default(kind: EstimatorKind) -> Self {
        let outcome = match kind {
            EstimatorKind::NonSmoothed => "z + l0 + l0:z",
            _ => "z + l0 + t + l0:z + l0:t",
        };
        EstimatorConfig {
            name: kind.as_str().to_string(),
            kind,
            family: Family::Linear,
            outcome_formula: parse(outcome).expect("static formula"),
            stratify_by_g: false,
            time_saturated: false,
            truncation: None,
            q_mode: QMode::Fitted,
            slice_fit_rows: SliceFitRows::SurvivorHistory,
            copy_mode: CopyMode::Auto,
            models: NuisanceModels {
                baseline: parse("l0").expect("static formula"),
                treatment: parse("a0 + l").expect("static formula"),
                measurement: parse("a + a0 + l").expect("static formula"),
                censoring: None,
                stabilizer: parse("a0 + l0").expect("static formula"),
            },
        }
    }

    /// Checks every formula against the variables its model may use.
    pub fn validate(&self, schema: &VariableSchema) -> Result<(), EstimationError> {
        let bad = |model: &str, name: &str| {
            EstimationError::InvalidConfig(format!(
                "{model} model may not use variable `{name}`"
            ))
        };
        let covs: HashSet<&str> = schema.covariate_columns.iter().map(String::as_str).collect();
        let v: HashSet<&str> = schema.v_columns.iter().map(String::as_str).collect();
        let treat = schema.treatment_column.as_str();
        let check = |model: &str, f: &Formula, allowed: &dyn Fn(&str) -> bool| {
            for name in f.variables() {
                if !allowed(&name) {
                    return Err(bad(model, &name));
                }
            }
            Ok(())
        };
        let m = &self.models;
        check("baseline treatment", &m.baseline, &|n| covs.contains(n))?;
        if m.baseline.uses_time() {
            return Err(EstimationError::InvalidConfig(
                "baseline treatment model may not use t".into(),
            ));
        }
        check("treatment", &m.treatment, &|n| covs.contains(n) || n == "a0")?;
        let history = |n: &str| covs.contains(n) || n == "a0" || n == treat;
        check("measurement", &m.measurement, &history)?;
        if let Some(c) = &m.censoring {
            check("censoring", c, &history)?;
        }
        if self.q_mode == QMode::Fitted {
            check("stabilizer", &m.stabilizer, &|n| v.contains(n) || n == "a0")?;
        }
        check("outcome", &self.outcome_formula, &|n| v.contains(n) || n == "z")?;
        if self.kind == EstimatorKind::NonSmoothed && self.outcome_formula.uses_time() {
            return Err(EstimationError::InvalidConfig(
                "the non-smoothed outcome model is fit at a single time and may not use t".into(),
            ));
        }
        if self.time_saturated && self.outcome_formula.uses_time() {
            return Err(EstimationError::InvalidConfig(
                "a time-saturated outcome model may not also contain t terms".into(),
            ));
        }
        if let Some(p) = self.truncation {
            if !(p > 0.5 && p <= 1.0) {
                return Err(EstimationError::InvalidConfig(format!(
                    "truncation percentile {p} outside (0.5, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub ridge_applied: bool,
}

impl FitSummary {
    pub fn new(model: &str, fit: &FitResult) -> Self {
        FitSummary {
            model: model.to_string(),
            converged: fit.converged,
            iterations: fit.iterations,
            final_gradient_norm: fit.final_gradient_norm,
            ridge_applied: fit.ridge_applied,
        }
    }
}

/// Nuisance probabilities on every row of one estimation dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub p_baseline_treated: Vec<f64>,
    /// One vector per strategy.
    pub p_adhere: Vec<Vec<f64>>,
    pub p_measured: Vec<f64>,
    pub p_uncensored: Option<Vec<f64>>,
    /// One vector per strategy; `None` means `q = 1`.
    pub q: Option<Vec<Vec<f64>>>,
    pub fits: Vec<FitSummary>,
}

/// Supplies the probabilities entering the weights for an estimation dataset.
pub trait NuisanceSource: Sync {
    fn evaluate(
        &self,
        d: &LongitudinalDataset,
        strategies: &[StrategySpec],
        rows: &[StrategyRows],
    ) -> Result<NuisanceValues, EstimationError>;
}

/// Pooled logistic nuisance models fit on the estimation dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedNuisance {
    pub models: NuisanceModels,
    pub q_mode: QMode,
}

fn fit_model(
    model: &str,
    d: &LongitudinalDataset,
    formula: &Formula,
    rows: &[usize],
    y: &[f64],
    person: &[usize],
) -> Result<(FitResult, FitSummary), EstimationError> {
    let frame = d.frame(rows, &formula.variables());
    let x = design_matrix(formula, &frame)?;
    let w: Vec<f64> = rows.iter().map(|&r| d.person_weight(person[r])).collect();
    let fit = glm::fit_logistic(&x, y, &w).map_err(|source| EstimationError::Fit {
        model: model.to_string(),
        source,
    })?;
    let summary = FitSummary::new(model, &fit);
    Ok((fit, summary))
}

fn predict_rows(
    d: &LongitudinalDataset,
    formula: &Formula,
    fit: &FitResult,
    rows: &[usize],
    out: &mut [f64],
    overrides: &[(&str, f64)],
) -> Result<(), EstimationError> {
    let mut frame = d.frame(rows, &formula.variables());
    for (name, value) in overrides {
        if frame.has(name) {
            frame.insert(name.to_string(), vec![*value; rows.len()]);
        }
    }
    let x = design_matrix(formula, &frame)?;
    let p = fit.predict(&x).map_err(|source| EstimationError::Fit {
        model: "prediction".into(),
        source,
    })?;
    for (&r, v) in rows.iter().zip(p) {
        out[r] = v;
    }
    Ok(())
}

impl NuisanceSource for FittedNuisance {
    fn evaluate(
        &self,
        d: &LongitudinalDataset,
        strategies: &[StrategySpec],
        rows: &[StrategyRows],
    ) -> Result<NuisanceValues, EstimationError> {
        let n = d.n_rows();
        let time = d.time();
        let a = d.treatment();
        let person = d.person_of_row();
        let mut fits = Vec::new();

        let baseline_rows: Vec<usize> = (0..n).filter(|&r| time[r] == 0).collect();
        let later_rows: Vec<usize> = (0..n).filter(|&r| time[r] > 0).collect();
        let y: Vec<f64> = baseline_rows.iter().map(|&r| a[r] as f64).collect();
        let (fit, s) = fit_model("baseline treatment", d, &self.models.baseline, &baseline_rows, &y, &person)?;
        fits.push(s);
        let mut p_baseline_treated = vec![f64::NAN; n];
        predict_rows(d, &self.models.baseline, &fit, &baseline_rows, &mut p_baseline_treated, &[])?;

        // One adherence fit per distinct set of intervened rows.
        let mut p_adhere: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
        let mut seen: Vec<(Vec<usize>, usize)> = Vec::new();
        for (k, sr) in rows.iter().enumerate() {
            let fit_rows = sr.intervened_rows();
            if let Some((_, j)) = seen.iter().find(|(r, _)| *r == fit_rows) {
                let copy = p_adhere[*j].clone();
                p_adhere.push(copy);
                continue;
            }
            let mut p = vec![f64::NAN; n];
            if !fit_rows.is_empty() {
                let y: Vec<f64> = fit_rows.iter().map(|&r| a[r] as f64).collect();
                let label = format!("treatment ({})", strategies[k].label);
                let (fit, s) = fit_model(&label, d, &self.models.treatment, &fit_rows, &y, &person)?;
                fits.push(s);
                predict_rows(d, &self.models.treatment, &fit, &fit_rows, &mut p, &[])?;
            }
            seen.push((fit_rows, k));
            p_adhere.push(p);
        }

        let alive: Vec<usize> = later_rows
            .iter()
            .copied()
            .filter(|&r| d.died()[r] == 0)
            .collect();
        let observed: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&r| d.censored()[r] == 0)
            .collect();
        let r_obs: Vec<f64> = observed.iter().map(|&r| d.measured()[r] as f64).collect();
        let (fit, s) = fit_model("measurement", d, &self.models.measurement, &observed, &r_obs, &person)?;
        fits.push(s);
        let mut p_measured = vec![f64::NAN; n];
        predict_rows(d, &self.models.measurement, &fit, &later_rows, &mut p_measured, &[])?;

        let p_uncensored = match &self.models.censoring {
            Some(f) if alive.iter().any(|&r| d.censored()[r] == 1) => {
                let y: Vec<f64> = alive.iter().map(|&r| 1.0 - d.censored()[r] as f64).collect();
                let (fit, s) = fit_model("censoring", d, f, &alive, &y, &person)?;
                fits.push(s);
                let mut p = vec![f64::NAN; n];
                predict_rows(d, f, &fit, &later_rows, &mut p, &[])?;
                Some(p)
            }
            _ => None,
        };

        let q = match self.q_mode {
            QMode::ConstantOne => None,
            QMode::Fitted => {
                let (fit, s) = fit_model("stabilizer", d, &self.models.stabilizer, &observed, &r_obs, &person)?;
                fits.push(s);
                let mut per = Vec::with_capacity(strategies.len());
                for spec in strategies {
                    let mut q = vec![1.0; n];
                    predict_rows(
                        d,
                        &self.models.stabilizer,
                        &fit,
                        &later_rows,
                        &mut q,
                        &[("a0", spec.arm as f64)],
                    )?;
                    per.push(q);
                }
                Some(per)
            }
        };

        Ok(NuisanceValues {
            p_baseline_treated,
            p_adhere,
            p_measured,
            p_uncensored,
            q,
            fits,
        })
    }
}

/// Resolves `CopyMode::Auto` and checks that the shortcut is admissible.
pub fn resolve_copy_mode(
    mode: CopyMode,
    strategies: &[StrategySpec],
) -> Result<CopyMode, EstimationError> {
    let exclusive = arms_mutually_exclusive(strategies)?;
    match mode {
        CopyMode::Auto => Ok(if exclusive { CopyMode::Shortcut } else { CopyMode::Copies }),
        CopyMode::Shortcut if !exclusive => Err(EstimationError::InvalidConfig(
            "the no-copy shortcut needs mutually exclusive baseline arms".into(),
        )),
        m => Ok(m),
    }
}

/// Weights for one estimation dataset, one set per strategy.
pub struct WeightedData {
    pub data: LongitudinalDataset,
    pub weights: Vec<WeightSet>,
    pub fits: Vec<FitSummary>,
}

pub fn weigh(
    d: LongitudinalDataset,
    strategies: &[StrategySpec],
    source: &dyn NuisanceSource,
) -> Result<WeightedData, EstimationError> {
    let rows: Vec<StrategyRows> = strategies.iter().map(|s| s.rows(&d)).collect();
    let nv = source.evaluate(&d, strategies, &rows)?;
    let weights = rows
        .iter()
        .enumerate()
        .map(|(k, sr)| {
            compute_weights(
                &d,
                sr,
                &WeightInputs {
                    p_baseline_treated: &nv.p_baseline_treated,
                    p_adhere: &nv.p_adhere[k],
                    p_measured: &nv.p_measured,
                    p_uncensored: nv.p_uncensored.as_deref(),
                    q: nv.q.as_ref().map(|q| q[k].as_slice()),
                },
            )
        })
        .collect();
    Ok(WeightedData {
        data: d,
        weights,
        fits: nv.fits,
    })
}

/// Rows of the outcome regression.
#[derive(Debug, Default, Clone)]
struct FitTable {
    t: Vec<f64>,
    g: Vec<usize>,
    v: Vec<Vec<f64>>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl FitTable {
    fn new(n_v: usize) -> Self {
        FitTable {
            v: vec![Vec::new(); n_v],
            ..Default::default()
        }
    }

    fn frame(&self, v_names: &[String], n_strategies: usize, rows: &[usize]) -> Frame {
        let mut frame = Frame::new(rows.iter().map(|&i| self.t[i]).collect());
        for (name, col) in v_names.iter().zip(&self.v) {
            frame.insert(name.clone(), rows.iter().map(|&i| col[i]).collect());
        }
        let g: Vec<usize> = rows.iter().map(|&i| self.g[i]).collect();
        frame.insert_strategy(&g, n_strategies);
        frame
    }
}

/// One candidate outcome-regression row with its weight.
struct Candidate {
    row: usize,
    copy: usize,
    weight: f64,
}

/// Selects outcome rows from a weighted dataset: rows passing `keep`, with
/// `R = 1`, in an included copy and with positive weight. Copies are visited
/// copy-major; the shortcut visits each person once, in their own arm.
fn candidates(
    wd: &WeightedData,
    strategies: &[StrategySpec],
    mode: CopyMode,
    keep: &dyn Fn(u32) -> bool,
) -> Vec<Candidate> {
    let d = &wd.data;
    let mut out = Vec::new();
    let push = |p: usize, k: usize, out: &mut Vec<Candidate>| {
        for r in d.person_rows(p) {
            let w = wd.weights[k].w_total[r];
            if keep(d.time()[r]) && d.measured()[r] == 1 && w > 0.0 {
                out.push(Candidate {
                    row: r,
                    copy: k,
                    weight: w,
                });
            }
        }
    };
    match mode {
        CopyMode::Shortcut => {
            for p in 0..d.n_individuals() {
                let a0 = d.treatment()[d.person_rows(p).start];
                if let Some(k) = strategies.iter().position(|s| s.arm == a0) {
                    push(p, k, &mut out);
                }
            }
        }
        _ => {
            for k in 0..strategies.len() {
                for p in 0..d.n_individuals() {
                    push(p, k, &mut out);
                }
            }
        }
    }
    out
}

/// Caps candidate weights at the `p` quantile of the pool.
fn truncate_pool(pool: &mut [Candidate], p: Option<f64>) -> Option<f64> {
    let p = p?;
    let mut refs: Vec<&mut f64> = pool.iter_mut().map(|c| &mut c.weight).collect();
    weights::truncate(&mut refs, p)
}

fn extend_table(table: &mut FitTable, wd: &WeightedData, pool: &[Candidate], v_names: &[String]) {
    let d = &wd.data;
    let person = d.person_of_row();
    let v_cols: Vec<&[f64]> = v_names
        .iter()
        .map(|n| d.covariate(n).expect("validated V column"))
        .collect();
    for c in pool {
        table.t.push(d.time()[c.row] as f64);
        table.g.push(c.copy);
        for (dst, src) in table.v.iter_mut().zip(&v_cols) {
            dst.push(src[c.row]);
        }
        table.y.push(d.outcome()[c.row].expect("measured row has an outcome"));
        table.w.push(c.weight * d.person_weight(person[c.row]));
    }
}

/// Fitted outcome regression(s).
struct OutcomeModel {
    formula: Formula,
    /// Distinct fitted times when time-saturated.
    times: Option<Vec<u32>>,
    /// One fit, or one per strategy when stratified.
    fits: Vec<Option<FitResult>>,
    stratified: bool,
    n_strategies: usize,
}

fn without_strategy_terms(f: &Formula) -> Formula {
    let kept: Vec<String> = f
        .terms()
        .iter()
        .skip(1)
        .filter(|t| !t.variables().contains(&"z"))
        .map(Term::to_string)
        .collect();
    parse(&kept.join(" + ")).expect("subset of a valid formula")
}

fn saturate(x0: &DMatrix<f64>, t: &[f64], times: &[u32]) -> DMatrix<f64> {
    let p = x0.ncols();
    DMatrix::from_fn(x0.nrows(), p * times.len(), |i, j| {
        let (block, col) = (j / p, j % p);
        if t[i] == times[block] as f64 {
            x0[(i, col)]
        } else {
            0.0
        }
    })
}

impl OutcomeModel {
    fn fit(
        cfg: &EstimatorConfig,
        table: &FitTable,
        v_names: &[String],
        n_strategies: usize,
        context: &str,
    ) -> Result<(Self, Vec<FitSummary>), EstimationError> {
        if table.y.is_empty() {
            return Err(EstimationError::NoMeasuredOutcomes(context.to_string()));
        }
        let formula = if cfg.stratify_by_g {
            without_strategy_terms(&cfg.outcome_formula)
        } else {
            cfg.outcome_formula.clone()
        };
        let times = cfg.time_saturated.then(|| {
            let mut ts: Vec<u32> = table.t.iter().map(|&t| t as u32).collect();
            ts.sort_unstable();
            ts.dedup();
            ts
        });
        let groups: Vec<Vec<usize>> = if cfg.stratify_by_g {
            (0..n_strategies)
                .map(|k| (0..table.y.len()).filter(|&i| table.g[i] == k).collect())
                .collect()
        } else {
            vec![(0..table.y.len()).collect()]
        };
        let mut fits = Vec::new();
        let mut summaries = Vec::new();
        for (k, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                fits.push(None);
                continue;
            }
            let frame = table.frame(v_names, n_strategies, rows);
            let mut x = design_matrix(&formula, &frame)?;
            if let Some(ts) = &times {
                let t: Vec<f64> = rows.iter().map(|&i| table.t[i]).collect();
                x = saturate(&x, &t, ts);
            }
            let y: Vec<f64> = rows.iter().map(|&i| table.y[i]).collect();
            let w: Vec<f64> = rows.iter().map(|&i| table.w[i]).collect();
            let label = if cfg.stratify_by_g {
                format!("outcome (copy {k})")
            } else {
                "outcome".to_string()
            };
            let fit = glm::fit(cfg.family, &x, &y, &w).map_err(|source| EstimationError::Fit {
                model: label.clone(),
                source,
            })?;
            summaries.push(FitSummary::new(&label, &fit));
            fits.push(Some(fit));
        }
        Ok((
            OutcomeModel {
                formula,
                times,
                fits,
                stratified: cfg.stratify_by_g,
                n_strategies,
            },
            summaries,
        ))
    }

    /// Mean prediction at `(g, t*)` over the survivors' baseline V.
    fn standardize(
        &self,
        survivors: &LongitudinalDataset,
        v_names: &[String],
        g: usize,
        t_star: u32,
    ) -> Result<f64, EstimationError> {
        let n = survivors.n_individuals();
        if n == 0 {
            return Err(EstimationError::NoSurvivors(t_star));
        }
        let fit = self.fits[if self.stratified { g } else { 0 }]
            .as_ref()
            .ok_or_else(|| EstimationError::NoMeasuredOutcomes(format!("strategy copy {g}")))?;
        let base_rows: Vec<usize> = (0..n).map(|p| survivors.person_rows(p).start).collect();
        let mut frame = Frame::new(vec![t_star as f64; n]);
        for name in v_names {
            let col = survivors.covariate(name).expect("validated V column");
            frame.insert(name.clone(), base_rows.iter().map(|&r| col[r]).collect());
        }
        frame.insert_strategy(&vec![g; n], self.n_strategies);
        let mut x = design_matrix(&self.formula, &frame)?;
        if let Some(ts) = &self.times {
            if !ts.contains(&t_star) {
                return Err(EstimationError::NoMeasuredOutcomes(format!("t={t_star}")));
            }
            x = saturate(&x, &vec![t_star as f64; n], ts);
        }
        let pred = fit.predict(&x).map_err(|source| EstimationError::Fit {
            model: "outcome prediction".into(),
            source,
        })?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, v) in pred.iter().enumerate() {
            let w = survivors.person_weight(p);
            num += w * v;
            den += w;
        }
        if den <= 0.0 {
            return Err(EstimationError::NoSurvivors(t_star));
        }
        Ok(num / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEstimate {
    pub strategy: String,
    pub t_star: u32,
    pub psi: f64,
    pub n_survivors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastType {
    Difference,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub t_star: u32,
    pub g1: String,
    pub g0: String,
    pub difference: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDiagnostics {
    /// `t*=k` for a per-outcome-time dataset, `slice t'=k` for a stacked slice.
    pub dataset: String,
    pub n_individuals: usize,
    pub n_outcome_rows: usize,
    pub weights: WeightDiagnostics,
    pub fits: Vec<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub kind: EstimatorKind,
    pub estimates: Vec<StrategyEstimate>,
    pub contrasts: Vec<Contrast>,
    pub diagnostics: Vec<DatasetDiagnostics>,
    pub outcome_fits: Vec<FitSummary>,
}

impl EstimatorResult {
    pub fn psi(&self, strategy: &str, t_star: u32) -> Option<f64> {
        self.estimates
            .iter()
            .find(|e| e.strategy == strategy && e.t_star == t_star)
            .map(|e| e.psi)
    }

    pub fn contrast(&self, t_star: u32) -> Option<&Contrast> {
        self.contrasts.iter().find(|c| c.t_star == t_star)
    }

    /// Every converged flag of every fit.
    pub fn all_converged(&self) -> bool {
        self.diagnostics
            .iter()
            .flat_map(|d| &d.fits)
            .chain(&self.outcome_fits)
            .all(|f| f.converged)
    }
}

/// `psi(g1) - psi(g0)` or `psi(g1) / psi(g0)`.
pub fn contrast(
    result: &EstimatorResult,
    g1: &str,
    g0: &str,
    t_star: u32,
    kind: ContrastType,
) -> Result<f64, EstimationError> {
    let a = result
        .psi(g1, t_star)
        .ok_or_else(|| EstimationError::UnknownStrategy(g1.to_string()))?;
    let b = result
        .psi(g0, t_star)
        .ok_or_else(|| EstimationError::UnknownStrategy(g0.to_string()))?;
    match kind {
        ContrastType::Difference => Ok(a - b),
        ContrastType::Ratio => {
            if b > 0.0 {
                Ok(a / b)
            } else {
                Err(EstimationError::DivisionByZero(t_star))
            }
        }
    }
}

/// Default contrast pairs: for two or more strategies, each later strategy
/// against the first.
pub fn default_contrasts(strategies: &[StrategySpec]) -> Vec<(String, String)> {
    strategies
        .iter()
        .skip(1)
        .map(|s| (s.label.clone(), strategies[0].label.clone()))
        .collect()
}

fn weight_summary(pools: &[f64], threshold: Option<f64>, n_floored: usize) -> WeightDiagnostics {
    weights::diagnostics(pools, threshold, n_floored)
}

/// Runs one estimator over the requested outcome times.
pub fn estimate(
    d: &LongitudinalDataset,
    strategies: &[StrategySpec],
    cfg: &EstimatorConfig,
    t_stars: &[u32],
    contrasts: &[(String, String)],
) -> Result<EstimatorResult, EstimationError> {
    let source = FittedNuisance {
        models: cfg.models.clone(),
        q_mode: cfg.q_mode,
    };
    estimate_with_source(d, strategies, cfg, t_stars, contrasts, &source)
}

pub fn estimate_with_source(
    d: &LongitudinalDataset,
    strategies: &[StrategySpec],
    cfg: &EstimatorConfig,
    t_stars: &[u32],
    contrasts: &[(String, String)],
    source: &dyn NuisanceSource,
) -> Result<EstimatorResult, EstimationError> {
    if strategies.is_empty() {
        return Err(EstimationError::InvalidConfig("no strategies".into()));
    }
    cfg.validate(d.schema())?;
    for s in strategies {
        s.validate(d.tau(), &d.schema().covariate_columns)?;
    }
    if let Some(&t) = t_stars.iter().find(|&&t| t < 1 || t > d.tau()) {
        return Err(EstimationError::InvalidConfig(format!(
            "outcome time {t} outside 1..={}",
            d.tau()
        )));
    }
    let mode = resolve_copy_mode(cfg.copy_mode, strategies)?;
    let v_names = d.schema().v_columns.clone();
    let (estimates, diagnostics, outcome_fits) = match cfg.kind {
        EstimatorKind::Stacked => stacked(d, strategies, cfg, t_stars, mode, &v_names, source)?,
        _ => per_time(d, strategies, cfg, t_stars, mode, &v_names, source)?,
    };
    let mut result = EstimatorResult {
        estimator: cfg.name.clone(),
        kind: cfg.kind,
        estimates,
        contrasts: Vec::new(),
        diagnostics,
        outcome_fits,
    };
    for &t in t_stars {
        for (g1, g0) in contrasts {
            let difference = contrast(&result, g1, g0, t, ContrastType::Difference)?;
            let ratio = match cfg.family {
                Family::Logistic => Some(contrast(&result, g1, g0, t, ContrastType::Ratio)?),
                Family::Linear => None,
            };
            result.contrasts.push(Contrast {
                t_star: t,
                g1: g1.clone(),
                g0: g0.clone(),
                difference,
                ratio,
            });
        }
    }
    Ok(result)
}

type Pieces = (Vec<StrategyEstimate>, Vec<DatasetDiagnostics>, Vec<FitSummary>);

fn survivors_at(d: &LongitudinalDataset, t: u32) -> Result<LongitudinalDataset, EstimationError> {
    restrict(d, t, Some(t)).map_err(|e| match e {
        DatasetError::EmptyResult => EstimationError::NoSurvivors(t),
        other => other.into(),
    })
}

fn per_time(
    d: &LongitudinalDataset,
    strategies: &[StrategySpec],
    cfg: &EstimatorConfig,
    t_stars: &[u32],
    mode: CopyMode,
    v_names: &[String],
    source: &dyn NuisanceSource,
) -> Result<Pieces, EstimationError> {
    let mut estimates = Vec::new();
    let mut diagnostics = Vec::new();
    let mut outcome_fits = Vec::new();
    for &t_star in t_stars {
        let wd = weigh(survivors_at(d, t_star)?, strategies, source)?;
        let mut pool = candidates(&wd, strategies, mode, &|_| true);
        let threshold = truncate_pool(&mut pool, cfg.truncation);
        let weights_only: Vec<f64> = pool.iter().map(|c| c.weight).collect();
        let floored = wd.weights.iter().map(|w| w.n_floored).sum();
        let only_t_star = cfg.kind == EstimatorKind::NonSmoothed;
        pool.retain(|c| !only_t_star || wd.data.time()[c.row] == t_star);
        let mut table = FitTable::new(v_names.len());
        extend_table(&mut table, &wd, &pool, v_names);
        let (model, fits) =
            OutcomeModel::fit(cfg, &table, v_names, strategies.len(), &format!("t*={t_star}"))?;
        outcome_fits.extend(fits.into_iter().map(|mut f| {
            f.model = format!("{} t*={t_star}", f.model);
            f
        }));
        for (k, s) in strategies.iter().enumerate() {
            estimates.push(StrategyEstimate {
                strategy: s.label.clone(),
                t_star,
                psi: model.standardize(&wd.data, v_names, k, t_star)?,
                n_survivors: wd.data.n_individuals(),
            });
        }
        diagnostics.push(DatasetDiagnostics {
            dataset: format!("t*={t_star}"),
            n_individuals: wd.data.n_individuals(),
            n_outcome_rows: table.y.len(),
            weights: weight_summary(&weights_only, threshold, floored),
            fits: wd.fits,
        });
    }
    Ok((estimates, diagnostics, outcome_fits))
}

fn stacked(
    d: &LongitudinalDataset,
    strategies: &[StrategySpec],
    cfg: &EstimatorConfig,
    t_stars: &[u32],
    mode: CopyMode,
    v_names: &[String],
    source: &dyn NuisanceSource,
) -> Result<Pieces, EstimationError> {
    let tau = d.tau();
    let mut table = FitTable::new(v_names.len());
    let mut diagnostics = Vec::new();
    let mut current: Option<(Vec<usize>, WeightedData)> = None;
    for slice_t in 1..=tau {
        let survivors: Vec<usize> = d.survivors(slice_t);
        if survivors.is_empty() {
            continue;
        }
        let reuse = cfg.slice_fit_rows == SliceFitRows::SurvivorHistory
            && current.as_ref().is_some_and(|(s, _)| *s == survivors);
        let fresh_fits = !reuse;
        if !reuse {
            let data = match cfg.slice_fit_rows {
                SliceFitRows::SurvivorHistory => restrict(d, tau, Some(slice_t))?,
                SliceFitRows::ThroughSlice => restrict(d, slice_t, Some(slice_t))?,
            };
            current = Some((survivors, weigh(data, strategies, source)?));
        }
        let (_, wd) = current.as_ref().expect("slice weights computed");
        let mut pool = candidates(wd, strategies, mode, &|t| t == slice_t);
        let threshold = truncate_pool(&mut pool, cfg.truncation);
        let floored = wd.weights.iter().map(|w| w.n_floored).sum();
        extend_table(&mut table, wd, &pool, v_names);
        diagnostics.push(DatasetDiagnostics {
            dataset: format!("slice t'={slice_t}"),
            n_individuals: wd.data.n_individuals(),
            n_outcome_rows: pool.len(),
            weights: weight_summary(
                &pool.iter().map(|c| c.weight).collect::<Vec<_>>(),
                threshold,
                floored,
            ),
            fits: if fresh_fits { wd.fits.clone() } else { Vec::new() },
        });
    }
    let (model, outcome_fits) =
        OutcomeModel::fit(cfg, &table, v_names, strategies.len(), "stacked table")?;
    let mut estimates = Vec::new();
    for &t_star in t_stars {
        let surv = survivors_at(d, t_star)?;
        for (k, s) in strategies.iter().enumerate() {
            estimates.push(StrategyEstimate {
                strategy: s.label.clone(),
                t_star,
                psi: model.standardize(&surv, v_names, k, t_star)?,
                n_survivors: surv.n_individuals(),
            });
        }
    }
    Ok((estimates, diagnostics, outcome_fits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LongitudinalDataset, Record, VariableSchema};

    fn schema(v: bool) -> VariableSchema {
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
            v_columns: if v { vec!["l0".into()] } else { vec![] },
        }
    }

    /// Deterministic small dataset: enough variation for every nuisance fit.
    fn toy(n: usize, tau: u32, y: impl Fn(usize, u32) -> f64, v: bool) -> LongitudinalDataset {
        let mut recs = Vec::new();
        for i in 0..n {
            let l0 = (i % 2) as f64;
            let a0 = ((i / 2) % 2) as u8;
            for t in 0..=tau {
                let hash = (((i as u64 * 2_654_435_761 + t as u64 * 40_503 + 13) >> 7) % 7) as usize;
                let a = if t == 0 { a0 } else { u8::from(hash % 3 != 0) };
                let r = u8::from(t > 0 && hash % 2 == 0);
                recs.push(Record {
                    id: format!("p{i}"),
                    t,
                    treatment: a,
                    covariates: vec![l0, ((hash + i) % 2) as f64],
                    measured: r,
                    outcome: (r == 1).then(|| y(i, t)),
                    censored: 0,
                    died: 0,
                });
            }
        }
        LongitudinalDataset::from_records(schema(v), recs).unwrap()
    }

    fn strategies() -> Vec<StrategySpec> {
        vec![StrategySpec::new("g0", 0, 1), StrategySpec::new("g1", 1, 1)]
    }

    fn config(kind: EstimatorKind) -> EstimatorConfig {
        let mut c = EstimatorConfig::simulation_default(kind);
        c.q_mode = QMode::ConstantOne;
        c
    }

    #[test]
    fn constant_outcome_gives_constant_estimate() {
        let d = toy(80, 4, |_, _| 3.25, true);
        let pairs = default_contrasts(&strategies());
        for kind in [EstimatorKind::NonSmoothed, EstimatorKind::Nonstacked, EstimatorKind::Stacked] {
            let r = estimate(&d, &strategies(), &config(kind), &[2, 4], &pairs).unwrap();
            for e in &r.estimates {
                assert!((e.psi - 3.25).abs() < 1e-10, "{kind:?} {e:?}");
            }
            assert!(r.contrasts.iter().all(|c| c.difference.abs() < 1e-10));
        }
    }

    #[test]
    fn self_contrast_is_zero_and_one() {
        let d = toy(80, 3, |i, t| (i % 5) as f64 + t as f64, true);
        let r = estimate(&d, &strategies(), &config(EstimatorKind::Nonstacked), &[3], &[]).unwrap();
        assert_eq!(contrast(&r, "g1", "g1", 3, ContrastType::Difference).unwrap(), 0.0);
        assert_eq!(contrast(&r, "g1", "g1", 3, ContrastType::Ratio).unwrap(), 1.0);
        assert!(matches!(
            contrast(&r, "g9", "g1", 3, ContrastType::Difference),
            Err(EstimationError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn ratio_requires_positive_reference() {
        let d = toy(80, 3, |_, _| -1.0, true);
        let r = estimate(&d, &strategies(), &config(EstimatorKind::Nonstacked), &[3], &[]).unwrap();
        assert_eq!(
            contrast(&r, "g1", "g0", 3, ContrastType::Ratio),
            Err(EstimationError::DivisionByZero(3))
        );
    }

    #[test]
    fn invalid_formulas_are_rejected() {
        let d = toy(20, 3, |_, _| 1.0, true);
        let mut c = config(EstimatorKind::NonSmoothed);
        c.outcome_formula = parse("z + t").unwrap();
        assert!(matches!(
            estimate(&d, &strategies(), &c, &[3], &[]),
            Err(EstimationError::InvalidConfig(_))
        ));
        let mut c = config(EstimatorKind::Nonstacked);
        c.outcome_formula = parse("z + l").unwrap();
        assert!(c.validate(d.schema()).is_err());
        let mut c = config(EstimatorKind::Nonstacked);
        c.models.treatment = parse("a + l").unwrap();
        assert!(c.validate(d.schema()).is_err());
        let mut c = config(EstimatorKind::Nonstacked);
        c.q_mode = QMode::Fitted;
        c.models.stabilizer = parse("l").unwrap();
        assert!(c.validate(d.schema()).is_err());
    }

    #[test]
    fn standardize_without_v_returns_the_prediction() {
        let d = toy(80, 3, |i, t| (i % 3) as f64 * 0.5 + t as f64, false);
        let mut c = config(EstimatorKind::NonSmoothed);
        c.outcome_formula = parse("z").unwrap();
        let r = estimate(&d, &strategies(), &c, &[2], &[]).unwrap();
        // Single-strategy-indicator model: psi(g) is the weighted mean of the
        // measured outcomes at t=2 in copy g, computed directly below.
        let source = FittedNuisance {
            models: c.models.clone(),
            q_mode: QMode::ConstantOne,
        };
        let wd = weigh(restrict(&d, 2, Some(2)).unwrap(), &strategies(), &source).unwrap();
        for (k, s) in strategies().iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for row in 0..wd.data.n_rows() {
                if wd.data.time()[row] == 2 && wd.data.measured()[row] == 1 {
                    let w = wd.weights[k].w_total[row];
                    num += w * wd.data.outcome()[row].unwrap();
                    den += w;
                }
            }
            assert!((r.psi(&s.label, 2).unwrap() - num / den).abs() < 1e-10);
        }
    }

    #[test]
    fn unknown_outcome_time_is_rejected() {
        let d = toy(20, 3, |_, _| 1.0, true);
        assert!(matches!(
            estimate(&d, &strategies(), &config(EstimatorKind::Stacked), &[4], &[]),
            Err(EstimationError::InvalidConfig(_))
        ));
    }
}
