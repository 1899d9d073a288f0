//! Exact evaluation of the identifying functionals on small discrete
//! data-generating processes, used as a test oracle for the estimators.
//!
//! A trajectory is the sequence `L_0, A_0` followed, for `t = 1, 2, ...`, by
//! `L_t, A_t, D_t, C_t, R_t`, each binary. `Y_t` has finite support, depends
//! on the history through `C_t` and never feeds back into later variables.
//! Conditional laws are functions of the full preceding history.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{LongitudinalDataset, Record, VariableSchema};
use crate::estimators::{EstimationError, NuisanceSource, NuisanceValues};
use crate::strategy::{grace_indicator, StrategyRows, StrategySpec};

pub const MAX_TAU: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("positivity violation at t={t}: {what}")]
    PositivityViolation { t: u32, what: String },
    #[error("no survivor mass at t*={0}")]
    NoSurvivorMass(u32),
    #[error("unsupported oracle configuration: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    L,
    A,
    D,
    C,
    R,
}

impl Var {
    fn code(self) -> u64 {
        match self {
            Var::L => 1,
            Var::A => 2,
            Var::D => 3,
            Var::C => 4,
            Var::R => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeathMode {
    None,
    /// Hazard depends on `L_0` and `t` only.
    Baseline,
    /// Hazard depends on the whole history.
    Full,
}

type ProbFn = dyn Fn(Var, u32, &[u8]) -> f64 + Send + Sync;
type YFn = dyn Fn(u32, &[u8]) -> Vec<f64> + Send + Sync;

/// Discrete longitudinal law with `tau <= 3`.
#[derive(Clone)]
pub struct DiscreteDgp {
    pub tau: u32,
    pub y_support: Vec<f64>,
    pub death: DeathMode,
    pub censoring: bool,
    prob: Arc<ProbFn>,
    y_probs: Arc<YFn>,
}

impl std::fmt::Debug for DiscreteDgp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteDgp")
            .field("tau", &self.tau)
            .field("y_support", &self.y_support)
            .field("death", &self.death)
            .field("censoring", &self.censoring)
            .finish_non_exhaustive()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash_unit(seed: u64, kind: u64, t: u32, hist: &[u8]) -> f64 {
    let mut bits: u64 = 1;
    for &h in hist {
        bits = (bits << 1) | h as u64;
    }
    let h = splitmix(splitmix(seed ^ (kind << 56) ^ ((t as u64) << 48)) ^ bits);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// `(t, variable)` at sequence position `k`.
pub fn position(k: usize) -> (u32, Var) {
    match k {
        0 => (0, Var::L),
        1 => (0, Var::A),
        _ => {
            let t = ((k - 2) / 5 + 1) as u32;
            let var = [Var::L, Var::A, Var::D, Var::C, Var::R][(k - 2) % 5];
            (t, var)
        }
    }
}

/// Sequence position of `(t, var)`.
pub fn index(t: u32, var: Var) -> usize {
    if t == 0 {
        return if var == Var::L { 0 } else { 1 };
    }
    let off = match var {
        Var::L => 0,
        Var::A => 1,
        Var::D => 2,
        Var::C => 3,
        Var::R => 4,
    };
    2 + 5 * (t as usize - 1) + off
}

impl DiscreteDgp {
    /// Seeded law with every conditional probability in (0.1, 0.9).
    pub fn random(seed: u64, tau: u32, death: DeathMode, censoring: bool) -> Self {
        assert!((1..=MAX_TAU).contains(&tau), "tau must be in 1..=3");
        let prob = move |var: Var, t: u32, hist: &[u8]| {
            let u = if var == Var::D && death == DeathMode::Baseline {
                hash_unit(seed, var.code(), t, &hist[..1])
            } else {
                hash_unit(seed, var.code(), t, hist)
            };
            0.1 + 0.8 * u
        };
        let y_probs = move |t: u32, hist: &[u8]| {
            let w: Vec<f64> = (0..3)
                .map(|k| 0.1 + hash_unit(seed, 10 + k, t, hist))
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        };
        Self::from_fn(tau, vec![-1.0, 0.5, 2.0], death, censoring, prob, y_probs)
    }

    /// Law from explicit functions: `prob(var, t, history)` is
    /// `Pr(var_t = 1 | history)` and `y_probs(t, history through C_t)` the
    /// distribution of `Y_t` over `y_support`. Probabilities for `D` and `C`
    /// are ignored (taken as 0) when deaths or censoring are switched off.
    pub fn from_fn(
        tau: u32,
        y_support: Vec<f64>,
        death: DeathMode,
        censoring: bool,
        prob: impl Fn(Var, u32, &[u8]) -> f64 + Send + Sync + 'static,
        y_probs: impl Fn(u32, &[u8]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        assert!((1..=MAX_TAU).contains(&tau), "tau must be in 1..=3");
        DiscreteDgp {
            tau,
            y_support,
            death,
            censoring,
            prob: Arc::new(prob),
            y_probs: Arc::new(y_probs),
        }
    }

    /// Observed-law `Pr(var = 1 | history)`; `history.len()` fixes the position.
    pub fn p1(&self, hist: &[u8]) -> f64 {
        let (t, var) = position(hist.len());
        match var {
            Var::D if self.death == DeathMode::None => 0.0,
            Var::C if !self.censoring => 0.0,
            _ => (self.prob)(var, t, hist),
        }
    }

    pub fn y_distribution(&self, t: u32, hist_through_c: &[u8]) -> Vec<f64> {
        (self.y_probs)(t, hist_through_c)
    }

    /// `E[Y_t | history through C_t]`.
    pub fn y_mean(&self, t: u32, hist_through_c: &[u8]) -> f64 {
        self.y_distribution(t, hist_through_c)
            .iter()
            .zip(&self.y_support)
            .map(|(p, y)| p * y)
            .sum()
    }
}

/// Strategies understood by the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleStrategy {
    /// Initiate `arm`, then take treatment whenever `m` consecutive
    /// off-treatment intervals have accrued (unless `L_t = 1` marks a
    /// contraindication and `contraindicated_by_l` is set).
    Grace {
        arm: u8,
        m: u32,
        contraindicated_by_l: bool,
    },
    /// Observed treatment law.
    Natural,
    /// Fixed treatment values `a_0, a_1, ...`.
    Static(Vec<u8>),
}

impl OracleStrategy {
    fn forced(&self, t: u32, prefix: &[u8]) -> Option<u8> {
        match self {
            OracleStrategy::Natural => None,
            OracleStrategy::Static(a) => Some(a[t as usize]),
            OracleStrategy::Grace {
                arm,
                m,
                contraindicated_by_l,
            } => {
                if t == 0 {
                    return Some(*arm);
                }
                let mut history = vec![1u8];
                history.extend((1..t).map(|s| prefix[index(s, Var::A)]));
                let flagged = *contraindicated_by_l && prefix[index(t, Var::L)] == 1;
                (grace_indicator(&history, flagged, *m) == 1).then_some(1)
            }
        }
    }

    /// The matching estimator strategy (grace strategies only).
    pub fn to_spec(&self, label: &str) -> Option<StrategySpec> {
        match self {
            OracleStrategy::Grace {
                arm,
                m,
                contraindicated_by_l,
            } => {
                let mut s = StrategySpec::new(label, *arm, *m);
                if *contraindicated_by_l {
                    s.contraindication = Some("l".into());
                }
                Some(s)
            }
            _ => None,
        }
    }
}

/// Conditional probabilities of one law over trajectories through `t_star`.
trait Law {
    fn p1(&self, hist: &[u8]) -> f64;
    fn y_mean(&self, t: u32, hist_through_c: &[u8]) -> f64;
}

/// Observed law with deaths ignored (`D_t = 0` with probability 1).
struct Observed<'a>(&'a DiscreteDgp);

impl Law for Observed<'_> {
    fn p1(&self, hist: &[u8]) -> f64 {
        match position(hist.len()).1 {
            Var::D => 0.0,
            _ => self.0.p1(hist),
        }
    }

    fn y_mean(&self, t: u32, hist: &[u8]) -> f64 {
        self.0.y_mean(t, hist)
    }
}

/// The observed law conditioned on survival through `t_star`.
pub struct SurvivorLaw<'a> {
    dgp: &'a DiscreteDgp,
    t_star: u32,
    memo: Mutex<HashMap<Vec<u8>, f64>>,
}

impl<'a> SurvivorLaw<'a> {
    pub fn new(dgp: &'a DiscreteDgp, t_star: u32) -> Result<Self, OracleError> {
        if dgp.censoring && dgp.death != DeathMode::None {
            return Err(OracleError::Unsupported(
                "survivor conditioning with censoring".into(),
            ));
        }
        let law = SurvivorLaw {
            dgp,
            t_star,
            memo: Mutex::new(HashMap::new()),
        };
        if law.survival(&mut Vec::new()) <= 0.0 {
            return Err(OracleError::NoSurvivorMass(t_star));
        }
        Ok(law)
    }

    /// `Pr(D_s = 0 for all s <= t* | prefix)`.
    fn survival(&self, prefix: &mut Vec<u8>) -> f64 {
        let (t, var) = position(prefix.len());
        if t > self.t_star {
            return 1.0;
        }
        if let Some(v) = self.memo.lock().expect("memo lock").get(prefix.as_slice()) {
            return *v;
        }
        let p1 = self.dgp.p1(prefix);
        let mut total = 0.0;
        for x in [0u8, 1] {
            let px = if x == 1 { p1 } else { 1.0 - p1 };
            if px == 0.0 || (var == Var::D && x == 1) {
                continue;
            }
            prefix.push(x);
            total += px * self.survival(prefix);
            prefix.pop();
        }
        self.memo
            .lock()
            .expect("memo lock")
            .insert(prefix.clone(), total);
        total
    }
}

impl Law for SurvivorLaw<'_> {
    fn p1(&self, hist: &[u8]) -> f64 {
        if position(hist.len()).1 == Var::D {
            return 0.0;
        }
        let mut prefix = hist.to_vec();
        let base = self.survival(&mut prefix);
        if base == 0.0 {
            return f64::NAN;
        }
        let p1 = self.dgp.p1(hist);
        if p1 == 0.0 {
            return 0.0;
        }
        prefix.push(1);
        let s1 = self.survival(&mut prefix);
        p1 * s1 / base
    }

    fn y_mean(&self, t: u32, hist: &[u8]) -> f64 {
        self.dgp.y_mean(t, hist)
    }
}

fn positivity(t: u32, what: &str) -> OracleError {
    OracleError::PositivityViolation {
        t,
        what: what.to_string(),
    }
}

fn check_horizon(dgp: &DiscreteDgp, t_star: u32) -> Result<(), OracleError> {
    if t_star < 1 || t_star > dgp.tau {
        return Err(OracleError::Unsupported(format!(
            "t*={t_star} outside 1..={}",
            dgp.tau
        )));
    }
    Ok(())
}

/// Generalized g-formula recursion: intervention densities for treatment,
/// observed conditionals for covariates (including earlier `R`), `C = 0`
/// and `R_{t*} = 1` conditioned on.
fn gformula_rec(
    law: &dyn Law,
    g: &OracleStrategy,
    t_star: u32,
    prefix: &mut Vec<u8>,
) -> Result<f64, OracleError> {
    let (t, var) = position(prefix.len());
    let p1 = law.p1(prefix);
    let branch = |x: u8, prefix: &mut Vec<u8>| -> Result<f64, OracleError> {
        prefix.push(x);
        let v = gformula_rec(law, g, t_star, prefix);
        prefix.pop();
        v
    };
    let natural = |prefix: &mut Vec<u8>| -> Result<f64, OracleError> {
        let mut total = 0.0;
        for (x, px) in [(0u8, 1.0 - p1), (1u8, p1)] {
            if px > 0.0 {
                total += px * branch(x, prefix)?;
            }
        }
        Ok(total)
    };
    match var {
        Var::L => natural(prefix),
        Var::A => match g.forced(t, prefix) {
            Some(target) => {
                let p = if target == 1 { p1 } else { 1.0 - p1 };
                if !(p > 0.0) {
                    return Err(positivity(t, "enforced treatment value has zero probability"));
                }
                branch(target, prefix)
            }
            None => natural(prefix),
        },
        Var::D => branch(0, prefix),
        Var::C => {
            if !(1.0 - p1 > 0.0) {
                return Err(positivity(t, "remaining uncensored has zero probability"));
            }
            branch(0, prefix)
        }
        Var::R => {
            if t < t_star {
                natural(prefix)
            } else {
                if !(p1 > 0.0) {
                    return Err(positivity(t, "outcome measurement has zero probability"));
                }
                Ok(law.y_mean(t, prefix))
            }
        }
    }
}

/// `E[Y W^g W^x]` with true conditional probabilities as weights.
fn ipw_rec(
    law: &dyn Law,
    g: &OracleStrategy,
    t_star: u32,
    prefix: &mut Vec<u8>,
    w: f64,
) -> Result<f64, OracleError> {
    let (t, var) = position(prefix.len());
    let p1 = law.p1(prefix);
    let mut total = 0.0;
    let mut visit = |x: u8, px: f64, w_next: f64, prefix: &mut Vec<u8>| -> Result<(), OracleError> {
        if px > 0.0 {
            prefix.push(x);
            total += px * ipw_rec(law, g, t_star, prefix, w_next)?;
            prefix.pop();
        }
        Ok(())
    };
    match var {
        Var::L => {
            visit(0, 1.0 - p1, w, prefix)?;
            visit(1, p1, w, prefix)?;
        }
        Var::A => match g.forced(t, prefix) {
            Some(target) => {
                let p = if target == 1 { p1 } else { 1.0 - p1 };
                if !(p > 0.0) {
                    if w != 0.0 {
                        return Err(positivity(t, "treatment weight denominator is zero"));
                    }
                    return Ok(0.0);
                }
                for x in [0u8, 1] {
                    let px = if x == 1 { p1 } else { 1.0 - p1 };
                    let factor = if x == target { 1.0 / p } else { 0.0 };
                    visit(x, px, w * factor, prefix)?;
                }
            }
            None => {
                visit(0, 1.0 - p1, w, prefix)?;
                visit(1, p1, w, prefix)?;
            }
        },
        Var::D => visit(0, 1.0, w, prefix)?,
        Var::C => {
            let p0 = 1.0 - p1;
            if !(p0 > 0.0) {
                if w != 0.0 {
                    return Err(positivity(t, "censoring weight denominator is zero"));
                }
                return Ok(0.0);
            }
            // The C = 1 branch carries weight 0.
            visit(0, p0, w / p0, prefix)?;
        }
        Var::R => {
            if t < t_star {
                visit(0, 1.0 - p1, w, prefix)?;
                visit(1, p1, w, prefix)?;
            } else {
                if !(p1 > 0.0) {
                    if w != 0.0 {
                        return Err(positivity(t, "measurement weight denominator is zero"));
                    }
                    return Ok(0.0);
                }
                total += p1 * (w / p1) * law.y_mean(t, prefix);
            }
        }
    }
    Ok(total)
}

/// `psi_{t*}(g)` by exact summation; deaths are ignored.
pub fn gformula_enumerate(
    dgp: &DiscreteDgp,
    g: &OracleStrategy,
    t_star: u32,
) -> Result<f64, OracleError> {
    check_horizon(dgp, t_star)?;
    gformula_rec(&Observed(dgp), g, t_star, &mut Vec::new())
}

/// `psi_{t*}(g, D_{t*} = 0)`: the g-formula with every term conditioned on
/// survival through `t*`.
pub fn gformula_enumerate_deaths(
    dgp: &DiscreteDgp,
    g: &OracleStrategy,
    t_star: u32,
) -> Result<f64, OracleError> {
    check_horizon(dgp, t_star)?;
    let law = SurvivorLaw::new(dgp, t_star)?;
    gformula_rec(&law, g, t_star, &mut Vec::new())
}

/// Exact IPW mean; `survivors` selects the death-conditioned law.
pub fn ipw_enumerate(
    dgp: &DiscreteDgp,
    g: &OracleStrategy,
    t_star: u32,
    survivors: bool,
) -> Result<f64, OracleError> {
    check_horizon(dgp, t_star)?;
    if survivors {
        let law = SurvivorLaw::new(dgp, t_star)?;
        ipw_rec(&law, g, t_star, &mut Vec::new(), 1.0)
    } else {
        ipw_rec(&Observed(dgp), g, t_star, &mut Vec::new(), 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub ipw: f64,
    pub gformula: f64,
    pub discrepancy: f64,
    pub pass: bool,
}

pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Compares the exact IPW mean with the enumerated g-formula.
pub fn ipw_identity_check(
    dgp: &DiscreteDgp,
    g: &OracleStrategy,
    t_star: u32,
    survivors: bool,
) -> Result<IdentityCheck, OracleError> {
    let gformula = if survivors {
        gformula_enumerate_deaths(dgp, g, t_star)?
    } else {
        gformula_enumerate(dgp, g, t_star)?
    };
    let ipw = ipw_enumerate(dgp, g, t_star, survivors)?;
    let discrepancy = (ipw - gformula).abs();
    Ok(IdentityCheck {
        ipw,
        gformula,
        discrepancy,
        pass: discrepancy <= IDENTITY_TOLERANCE,
    })
}

/// One observed trajectory with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub probability: f64,
    /// Sequence values (see [`position`]); may stop early at death or censoring.
    pub values: Vec<u8>,
    /// `Y_t` for measured intervals, indexed by `t`.
    pub outcomes: Vec<Option<f64>>,
}

/// All observed trajectories through `horizon` with positive probability.
pub fn enumerate_trajectories(dgp: &DiscreteDgp, horizon: u32) -> Vec<Trajectory> {
    fn rec(
        dgp: &DiscreteDgp,
        horizon: u32,
        prefix: &mut Vec<u8>,
        outcomes: &mut Vec<Option<f64>>,
        mass: f64,
        out: &mut Vec<Trajectory>,
    ) {
        let (t, var) = position(prefix.len());
        if t > horizon {
            out.push(Trajectory {
                probability: mass,
                values: prefix.clone(),
                outcomes: outcomes.clone(),
            });
            return;
        }
        let p1 = dgp.p1(prefix);
        for x in [0u8, 1] {
            let px = if x == 1 { p1 } else { 1.0 - p1 };
            if px <= 0.0 {
                continue;
            }
            prefix.push(x);
            let stops = x == 1 && matches!(var, Var::D | Var::C);
            if stops {
                outcomes.push(None);
                out.push(Trajectory {
                    probability: mass * px,
                    values: prefix.clone(),
                    outcomes: outcomes.clone(),
                });
                outcomes.pop();
            } else if var == Var::R && x == 1 {
                let through_c = &prefix[..prefix.len() - 1];
                let dist = dgp.y_distribution(t, through_c);
                for (py, y) in dist.iter().zip(&dgp.y_support) {
                    if *py > 0.0 {
                        outcomes.push(Some(*y));
                        rec(dgp, horizon, prefix, outcomes, mass * px * py, out);
                        outcomes.pop();
                    }
                }
            } else if var == Var::R {
                outcomes.push(None);
                rec(dgp, horizon, prefix, outcomes, mass * px, out);
                outcomes.pop();
            } else {
                rec(dgp, horizon, prefix, outcomes, mass * px, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let mut outcomes = vec![None];
    rec(dgp, horizon, &mut Vec::new(), &mut outcomes, 1.0, &mut out);
    out
}

pub fn oracle_schema(v_columns: bool) -> VariableSchema {
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
        v_columns: if v_columns { vec!["l0".into()] } else { vec![] },
    }
}

/// The exact observed law through `horizon` as a dataset: one individual per
/// trajectory, carrying the trajectory probability as its frequency weight.
pub fn exact_dataset(dgp: &DiscreteDgp, horizon: u32, v_columns: bool) -> LongitudinalDataset {
    let trajectories = enumerate_trajectories(dgp, horizon);
    let mut records = Vec::new();
    let mut weights = Vec::with_capacity(trajectories.len());
    for (i, tr) in trajectories.iter().enumerate() {
        let id = format!("e{i}");
        let l0 = tr.values[0] as f64;
        records.push(Record {
            id: id.clone(),
            t: 0,
            treatment: tr.values[1],
            covariates: vec![l0, l0],
            measured: 0,
            outcome: None,
            censored: 0,
            died: 0,
        });
        let mut t = 1;
        while index(t, Var::L) < tr.values.len() {
            let at = |v: Var| tr.values.get(index(t, v)).copied().unwrap_or(0);
            records.push(Record {
                id: id.clone(),
                t,
                treatment: at(Var::A),
                covariates: vec![l0, at(Var::L) as f64],
                measured: at(Var::R),
                outcome: tr.outcomes.get(t as usize).copied().flatten(),
                censored: at(Var::C),
                died: at(Var::D),
            });
            t += 1;
        }
        weights.push(tr.probability);
    }
    LongitudinalDataset::from_records(oracle_schema(v_columns), records)
        .and_then(|d| d.with_person_weights(weights))
        .expect("enumerated trajectories form a valid dataset")
}

/// Sum of all trajectory probabilities (should be 1).
pub fn total_mass(dgp: &DiscreteDgp, horizon: u32) -> f64 {
    enumerate_trajectories(dgp, horizon)
        .iter()
        .map(|t| t.probability)
        .sum()
}

/// Plain `E[Y_{t*}]` under the observed law without deaths or censoring.
pub fn plain_mean(dgp: &DiscreteDgp, t_star: u32) -> f64 {
    fn rec(dgp: &DiscreteDgp, t_star: u32, prefix: &mut Vec<u8>) -> f64 {
        let (t, var) = position(prefix.len());
        if t == t_star && var == Var::R {
            return dgp.y_mean(t, prefix);
        }
        let p1 = dgp.p1(prefix);
        let mut total = 0.0;
        for (x, px) in [(0u8, 1.0 - p1), (1u8, p1)] {
            if px > 0.0 {
                prefix.push(x);
                total += px * rec(dgp, t_star, prefix);
                prefix.pop();
            }
        }
        total
    }
    rec(dgp, t_star, &mut Vec::new())
}

/// Monte Carlo mean of `Y_{t*}` among survivors, simulated under the
/// intervention (treatment per `g`, censoring eliminated, `R_{t*} = 1`).
/// Returns the mean and its standard error.
pub fn monte_carlo_intervened(
    dgp: &DiscreteDgp,
    g: &OracleStrategy,
    t_star: u32,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut prefix = Vec::with_capacity(index(t_star, Var::R) + 1);
    'people: for _ in 0..n {
        prefix.clear();
        loop {
            let (t, var) = position(prefix.len());
            let natural = |prefix: &[u8], rng: &mut ChaCha8Rng| {
                u8::from(rng.random::<f64>() < dgp.p1(prefix))
            };
            let x = match var {
                Var::A => match g.forced(t, &prefix) {
                    Some(v) => v,
                    None => natural(&prefix, &mut rng),
                },
                Var::C => 0,
                Var::R if t == t_star => break,
                _ => natural(&prefix, &mut rng),
            };
            if var == Var::D && x == 1 {
                continue 'people;
            }
            prefix.push(x);
        }
        let dist = dgp.y_distribution(t_star, &prefix);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = *dgp.y_support.last().expect("nonempty support");
        for (p, v) in dist.iter().zip(&dgp.y_support) {
            acc += p;
            if u < acc {
                y = *v;
                break;
            }
        }
        sum += y;
        sum_sq += y * y;
        count += 1;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean) * count as f64 / (count as f64 - 1.0);
    (mean, (var / count as f64).sqrt())
}

/// Nuisance probabilities taken from the true law (conditioned on survival
/// through `t_star` when the law has deaths) instead of fitted models.
pub struct TrueNuisance {
    pub dgp: DiscreteDgp,
    pub t_star: u32,
}

impl TrueNuisance {
    fn law(&self) -> Result<Box<dyn Law + '_>, EstimationError> {
        if self.dgp.death == DeathMode::None {
            Ok(Box::new(Observed(&self.dgp)))
        } else {
            SurvivorLaw::new(&self.dgp, self.t_star)
                .map(|l| Box::new(l) as Box<dyn Law>)
                .map_err(|e| EstimationError::Positivity(e.to_string()))
        }
    }
}

impl NuisanceSource for TrueNuisance {
    fn evaluate(
        &self,
        d: &LongitudinalDataset,
        strategies: &[StrategySpec],
        rows: &[StrategyRows],
    ) -> Result<NuisanceValues, EstimationError> {
        let law = self.law()?;
        let n = d.n_rows();
        let l = d.covariate("l").expect("oracle schema");
        let mut p_baseline_treated = vec![f64::NAN; n];
        let mut p_adhere_all = vec![f64::NAN; n];
        let mut p_measured = vec![f64::NAN; n];
        let mut p_uncensored = vec![f64::NAN; n];
        for p in 0..d.n_individuals() {
            let mut prefix: Vec<u8> = Vec::new();
            for r in d.person_rows(p) {
                let t = d.time()[r];
                prefix.push(l[r] as u8);
                if t == 0 {
                    p_baseline_treated[r] = law.p1(&prefix);
                    prefix.push(d.treatment()[r]);
                    continue;
                }
                p_adhere_all[r] = law.p1(&prefix);
                prefix.push(d.treatment()[r]);
                prefix.push(d.died()[r]);
                p_uncensored[r] = 1.0 - law.p1(&prefix);
                prefix.push(d.censored()[r]);
                p_measured[r] = law.p1(&prefix);
                prefix.push(d.measured()[r]);
            }
        }
        let p_adhere = rows
            .iter()
            .map(|sr| {
                (0..n)
                    .map(|r| if sr.forced[r].is_some() { p_adhere_all[r] } else { f64::NAN })
                    .collect()
            })
            .collect();
        let _ = strategies;
        Ok(NuisanceValues {
            p_baseline_treated,
            p_adhere,
            p_measured,
            p_uncensored: self.dgp.censoring.then_some(p_uncensored),
            q: None,
            fits: Vec::new(),
        })
    }
}
