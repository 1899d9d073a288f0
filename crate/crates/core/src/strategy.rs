//! Natural grace-period strategies and the per-row strategy state consumed by
//! the weights.
//!
//! `A_0` records which arm was initiated and `A_t` (t >= 1) whether the
//! initiated medication was still being taken. For the grace clock the
//! baseline interval counts as an on-treatment interval: initiating an arm
//! means taking it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LongitudinalDataset;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("strategy `{label}`: grace length {m} outside 1..={tau}")]
    GraceLength { label: String, m: u32, tau: u32 },
    #[error("strategy `{label}`: outcome time {t} outside 1..={tau}")]
    OutcomeTime { label: String, t: u32, tau: u32 },
    #[error("strategy `{label}`: baseline arm must be 0 or 1, got {arm}")]
    Arm { label: String, arm: u8 },
    #[error("strategy `{label}`: unknown contraindication column `{column}`")]
    UnknownColumn { label: String, column: String },
    #[error("strategy labels must be unique; `{0}` repeats")]
    DuplicateLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub label: String,
    pub arm: u8,
    pub grace_length: u32,
    #[serde(default)]
    pub contraindication: Option<String>,
    #[serde(default)]
    pub t_star: Vec<u32>,
}

impl StrategySpec {
    pub fn new(label: &str, arm: u8, grace_length: u32) -> Self {
        StrategySpec {
            label: label.to_string(),
            arm,
            grace_length,
            contraindication: None,
            t_star: Vec::new(),
        }
    }

    pub fn validate(&self, tau: u32, covariates: &[String]) -> Result<(), StrategyError> {
        if self.arm > 1 {
            return Err(StrategyError::Arm {
                label: self.label.clone(),
                arm: self.arm,
            });
        }
        if self.grace_length < 1 || self.grace_length > tau {
            return Err(StrategyError::GraceLength {
                label: self.label.clone(),
                m: self.grace_length,
                tau,
            });
        }
        if let Some(&t) = self.t_star.iter().find(|&&t| t < 1 || t > tau) {
            return Err(StrategyError::OutcomeTime {
                label: self.label.clone(),
                t,
                tau,
            });
        }
        if let Some(c) = &self.contraindication {
            if !covariates.contains(c) {
                return Err(StrategyError::UnknownColumn {
                    label: self.label.clone(),
                    column: c.clone(),
                });
            }
        }
        Ok(())
    }

    /// Per-row strategy state over `d`.
    pub fn rows(&self, d: &LongitudinalDataset) -> StrategyRows {
        let a = d.treatment();
        let contra = self
            .contraindication
            .as_ref()
            .and_then(|c| d.covariate(c));
        let mut forced = vec![None; d.n_rows()];
        let mut history: Vec<u8> = Vec::new();
        for p in 0..d.n_individuals() {
            let rows = d.person_rows(p);
            history.clear();
            for r in rows {
                let t = d.time()[r];
                if t == 0 {
                    history.push(1);
                    continue;
                }
                let flagged = contra.is_some_and(|c| c[r] != 0.0);
                if grace_indicator(&history, flagged, self.grace_length) == 1 {
                    forced[r] = Some(1);
                }
                history.push(a[r]);
            }
        }
        StrategyRows {
            baseline_arm: self.arm,
            forced,
        }
    }
}

/// What the weights need from a strategy: the baseline arm and, per row, the
/// treatment value the strategy enforces (`None` where it leaves the natural
/// value alone). Other strategy families plug in by producing this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyRows {
    pub baseline_arm: u8,
    pub forced: Vec<Option<u8>>,
}

impl StrategyRows {
    pub fn intervened_rows(&self) -> Vec<usize> {
        (0..self.forced.len())
            .filter(|&r| self.forced[r].is_some())
            .collect()
    }
}

/// `G^m_t` from the treatment history `A_0..A_{t-1}` (so `t` is the history
/// length): 1 iff `t >= m`, the last `m` values are all 0 and the row is not
/// contraindicated.
pub fn grace_indicator(history: &[u8], contraindicated: bool, m: u32) -> u8 {
    let m = m as usize;
    let t = history.len();
    if m == 0 || t < m || contraindicated {
        return 0;
    }
    u8::from(history[t - m..].iter().all(|&a| a == 0))
}

pub fn baseline_consistent(a0: u8, spec: &StrategySpec) -> u8 {
    u8::from(a0 == spec.arm)
}

/// Labels must be unique; returns whether the baseline arms are pairwise
/// distinct (so each person is consistent with at most one strategy).
pub fn arms_mutually_exclusive(strategies: &[StrategySpec]) -> Result<bool, StrategyError> {
    let mut labels = std::collections::HashSet::new();
    for s in strategies {
        if !labels.insert(s.label.as_str()) {
            return Err(StrategyError::DuplicateLabel(s.label.clone()));
        }
    }
    let mut arms = std::collections::HashSet::new();
    Ok(strategies.iter().all(|s| arms.insert(s.arm)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grace_examples() {
        assert_eq!(grace_indicator(&[1, 1, 0, 0], false, 2), 1);
        assert_eq!(grace_indicator(&[1, 1, 1, 0], false, 2), 0);
        assert_eq!(grace_indicator(&[1, 1, 0, 0], true, 2), 0);
        assert_eq!(grace_indicator(&[0], false, 2), 0);
        assert_eq!(grace_indicator(&[0, 0], false, 2), 1);
    }

    #[test]
    fn baseline_consistency() {
        let s = StrategySpec::new("g1", 1, 2);
        assert_eq!(baseline_consistent(1, &s), 1);
        assert_eq!(baseline_consistent(0, &s), 0);
    }

    #[test]
    fn validation() {
        let cov = vec!["l".to_string()];
        let mut s = StrategySpec::new("g", 1, 2);
        s.t_star = vec![1, 6];
        assert!(s.validate(6, &cov).is_ok());
        s.t_star = vec![0];
        assert!(matches!(s.validate(6, &cov), Err(StrategyError::OutcomeTime { .. })));
        let mut s = StrategySpec::new("g", 1, 7);
        assert!(matches!(s.validate(6, &cov), Err(StrategyError::GraceLength { .. })));
        s.grace_length = 2;
        s.contraindication = Some("preg".into());
        assert!(matches!(s.validate(6, &cov), Err(StrategyError::UnknownColumn { .. })));
        let dup = [StrategySpec::new("g", 1, 2), StrategySpec::new("g", 0, 2)];
        assert!(arms_mutually_exclusive(&dup).is_err());
        let same = [StrategySpec::new("a", 1, 2), StrategySpec::new("b", 1, 3)];
        assert_eq!(arms_mutually_exclusive(&same), Ok(false));
    }

    proptest! {
        #[test]
        fn grace_properties(history in prop::collection::vec(0u8..2, 0..12), m in 1u32..5) {
            let g = grace_indicator(&history, false, m);
            if history.len() < m as usize {
                prop_assert_eq!(g, 0);
            }
            if history.last() == Some(&1) {
                prop_assert_eq!(g, 0);
            }
        }
    }
}
