//! Inverse probability weights: treatment (grace-period form), measurement,
//! censoring, the stabilizer `q`, their product and percentile truncation.

use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::strategy::StrategyRows;

/// Fitted probabilities below this make the row weight 0 (counted).
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Probabilities evaluated on every row of one estimation dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightInputs<'a> {
    /// `Pr(A_0 = 1 | L_0)`, read on `t = 0` rows.
    pub p_baseline_treated: &'a [f64],
    /// `Pr(A_t = 1 | G_t = 1, history)`, read on intervened rows.
    pub p_adhere: &'a [f64],
    /// `Pr(R_t = 1 | history)`, read on `t >= 1` rows.
    pub p_measured: &'a [f64],
    /// `Pr(C_t = 0 | history)`; `None` means no censoring model.
    pub p_uncensored: Option<&'a [f64]>,
    /// Stabilizer `q(g, V, t)`; `None` means `q = 1`.
    pub q: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub w_treatment: Vec<f64>,
    pub w_measurement: Vec<f64>,
    pub w_censoring: Vec<f64>,
    pub q_value: Vec<f64>,
    pub w_total: Vec<f64>,
    /// Rows zeroed because a denominator fell below [`DENOMINATOR_FLOOR`].
    pub n_floored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub n_rows: usize,
    pub n_zero: usize,
    pub mean: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub truncation_threshold: Option<f64>,
    pub n_floored: usize,
}

/// `I(x = 1) / p`, or 0 with a floor hit when `p` is too small.
fn inverse(indicator: bool, p: f64, floored: &mut usize) -> f64 {
    if !indicator {
        0.0
    } else if p.is_nan() || p < DENOMINATOR_FLOOR {
        *floored += 1;
        0.0
    } else {
        1.0 / p
    }
}

/// One factor of the treatment product: `(1 - G) + G * A / p`.
pub fn grace_factor(g: u8, a: u8, p: f64) -> f64 {
    let mut floored = 0;
    if g == 0 {
        1.0
    } else {
        inverse(a == 1, p, &mut floored)
    }
}

/// `I(R = 1) / p`.
pub fn measurement_factor(r: u8, p: f64) -> f64 {
    let mut floored = 0;
    inverse(r == 1, p, &mut floored)
}

/// Treatment, measurement, censoring and stabilizer weights for every row of
/// `d` under one strategy.
pub fn compute_weights(
    d: &LongitudinalDataset,
    strategy: &StrategyRows,
    inputs: &WeightInputs<'_>,
) -> WeightSet {
    let n = d.n_rows();
    let a = d.treatment();
    let c = d.censored();
    let r = d.measured();
    let time = d.time();
    let mut w_treatment = vec![0.0; n];
    let mut w_measurement = vec![0.0; n];
    let mut w_censoring = vec![0.0; n];
    let mut q_value = vec![1.0; n];
    let mut floored = 0;
    for p in 0..d.n_individuals() {
        let mut wt = 0.0;
        let mut wc = 1.0;
        for row in d.person_rows(p) {
            if time[row] == 0 {
                let p1 = inputs.p_baseline_treated[row];
                let arm = strategy.baseline_arm;
                let denom = if arm == 1 { p1 } else { 1.0 - p1 };
                wt = inverse(a[row] == arm, denom, &mut floored);
                wc = 1.0;
            } else {
                if let Some(target) = strategy.forced[row] {
                    if wt != 0.0 {
                        let p1 = inputs.p_adhere[row];
                        let denom = if target == 1 { p1 } else { 1.0 - p1 };
                        wt *= inverse(a[row] == target, denom, &mut floored);
                    }
                }
                if wc != 0.0 {
                    wc *= match inputs.p_uncensored {
                        Some(pc) => inverse(c[row] == 0, pc[row], &mut floored),
                        None => {
                            if c[row] == 0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                }
                w_measurement[row] = inverse(r[row] == 1, inputs.p_measured[row], &mut floored);
            }
            w_treatment[row] = wt;
            w_censoring[row] = wc;
            if let Some(q) = inputs.q {
                if time[row] > 0 {
                    q_value[row] = q[row];
                }
            }
        }
    }
    let w_total = (0..n)
        .map(|i| w_treatment[i] * w_measurement[i] * w_censoring[i] * q_value[i])
        .collect();
    WeightSet {
        w_treatment,
        w_measurement,
        w_censoring,
        q_value,
        w_total,
        n_floored: floored,
    }
}

/// Index (1-based) of the order statistic used as the `p` quantile of `k`
/// values: `ceil(p k)` clamped to `1..=k`. A tiny slack absorbs binary
/// rounding in `p k` (0.95 * 1000 is not exactly 950 in floating point).
pub fn order_statistic_index(p: f64, k: usize) -> usize {
    let raw = (p * k as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(k.max(1))
}

/// Empirical `p` quantile of `values` by the order-statistic rule.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[order_statistic_index(p, sorted.len()) - 1])
}

/// Caps the weights at the `p` quantile of the positive weights and returns
/// the threshold (`None` when there are no positive weights).
pub fn truncate(weights: &mut [&mut f64], p: f64) -> Option<f64> {
    let positive: Vec<f64> = weights.iter().map(|w| **w).filter(|w| *w > 0.0).collect();
    let threshold = quantile(&positive, p)?;
    for w in weights.iter_mut() {
        if **w > threshold {
            **w = threshold;
        }
    }
    Some(threshold)
}

pub fn diagnostics(
    weights: &[f64],
    truncation_threshold: Option<f64>,
    n_floored: usize,
) -> WeightDiagnostics {
    let positive: Vec<f64> = weights.iter().copied().filter(|w| *w > 0.0).collect();
    let mean = if weights.is_empty() {
        0.0
    } else {
        weights.iter().sum::<f64>() / weights.len() as f64
    };
    WeightDiagnostics {
        n_rows: weights.len(),
        n_zero: weights.len() - positive.len(),
        mean,
        p95: quantile(&positive, 0.95).unwrap_or(0.0),
        p99: quantile(&positive, 0.99).unwrap_or(0.0),
        max: positive.iter().copied().fold(0.0, f64::max),
        truncation_threshold,
        n_floored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LongitudinalDataset, Record, VariableSchema};
    use crate::strategy::StrategySpec;

    fn schema() -> VariableSchema {
        VariableSchema {
            id_column: "id".into(),
            time_column: "time".into(),
            treatment_column: "a".into(),
            covariate_columns: vec!["l".into()],
            measured_column: "r".into(),
            outcome_column: "y".into(),
            censor_column: "c".into(),
            death_column: "d".into(),
            baseline_covariates: vec![],
            v_columns: vec![],
        }
    }

    fn person(id: &str, a: &[u8], r: &[u8], c_at: Option<u32>) -> Vec<Record> {
        a.iter()
            .enumerate()
            .map(|(t, &at)| Record {
                id: id.into(),
                t: t as u32,
                treatment: at,
                covariates: vec![0.0],
                measured: r[t],
                outcome: (r[t] == 1).then_some(1.0),
                censored: u8::from(c_at == Some(t as u32)),
                died: 0,
            })
            .collect()
    }

    #[test]
    fn factor_arithmetic() {
        assert_eq!(grace_factor(0, 0, 0.3), 1.0);
        assert_eq!(grace_factor(0, 1, 0.3), 1.0);
        assert_eq!(grace_factor(1, 0, 0.5), 0.0);
        assert_eq!(grace_factor(1, 1, 0.5), 2.0);
        assert_eq!(measurement_factor(0, 0.25), 0.0);
        assert_eq!(measurement_factor(1, 0.25), 4.0);
    }

    #[test]
    fn cumulative_weights_and_zero_propagation() {
        // Arm 1, m = 1: grace ends whenever the previous interval was off.
        let mut recs = person("p", &[1, 0, 1, 1, 0], &[0, 1, 1, 0, 1], None);
        recs.extend(person("q", &[1, 0, 0, 1, 1], &[0, 1, 1, 1, 1], None));
        recs.extend(person("u", &[1, 1, 1, 1, 1], &[0, 1, 1, 0, 1], Some(3)));
        let mut recs2 = recs.clone();
        recs2.truncate(recs.len() - 1);
        let d = LongitudinalDataset::from_records(schema(), recs2).unwrap();
        let spec = StrategySpec::new("g", 1, 1);
        let rows = spec.rows(&d);
        let n = d.n_rows();
        let pb = vec![0.8; n];
        let pa = vec![0.5; n];
        let pr = vec![0.25; n];
        let pc = vec![0.5; n];
        let w = compute_weights(
            &d,
            &rows,
            &WeightInputs {
                p_baseline_treated: &pb,
                p_adhere: &pa,
                p_measured: &pr,
                p_uncensored: Some(&pc),
                q: None,
            },
        );
        // p: t=1 not forced (A0 counts as on), t=2 forced & A=1 -> x2, t=3 not
        // forced, t=4 not forced.
        let p_rows: Vec<f64> = d.person_rows(0).map(|i| w.w_treatment[i]).collect();
        assert_eq!(p_rows, vec![1.25, 1.25, 2.5, 2.5, 2.5]);
        // q: t=2 forced & A=0 -> 0 from there on.
        let q_rows: Vec<f64> = d.person_rows(1).map(|i| w.w_treatment[i]).collect();
        assert_eq!(q_rows, vec![1.25, 1.25, 0.0, 0.0, 0.0]);
        // u: censored at t=3.
        let c_rows: Vec<f64> = d.person_rows(2).map(|i| w.w_censoring[i]).collect();
        assert_eq!(c_rows, vec![1.0, 2.0, 4.0, 0.0]);
        let m_rows: Vec<f64> = d.person_rows(0).map(|i| w.w_measurement[i]).collect();
        assert_eq!(m_rows, vec![0.0, 4.0, 4.0, 0.0, 4.0]);
        for i in 0..n {
            assert_eq!(
                w.w_total[i],
                w.w_treatment[i] * w.w_measurement[i] * w.w_censoring[i]
            );
        }
        // arm 0 strategy: all persons initiated arm 1.
        let zero = compute_weights(
            &d,
            &StrategySpec::new("g0", 0, 1).rows(&d),
            &WeightInputs {
                p_baseline_treated: &pb,
                p_adhere: &pa,
                p_measured: &pr,
                p_uncensored: None,
                q: None,
            },
        );
        assert!(zero.w_treatment.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn no_censoring_model_gives_unit_censoring_weight() {
        let d = LongitudinalDataset::from_records(schema(), person("p", &[1, 1, 1], &[0, 1, 0], None))
            .unwrap();
        let ones = vec![1.0; 3];
        let w = compute_weights(
            &d,
            &StrategySpec::new("g", 1, 2).rows(&d),
            &WeightInputs {
                p_baseline_treated: &ones,
                p_adhere: &ones,
                p_measured: &ones,
                p_uncensored: Some(&ones),
                q: None,
            },
        );
        assert_eq!(w.w_censoring, vec![1.0; 3]);
    }

    #[test]
    fn floor_zeroes_and_counts() {
        let d = LongitudinalDataset::from_records(schema(), person("p", &[1, 1], &[0, 1], None))
            .unwrap();
        let pb = vec![1.0; 2];
        let pr = vec![1e-13; 2];
        let w = compute_weights(
            &d,
            &StrategySpec::new("g", 1, 1).rows(&d),
            &WeightInputs {
                p_baseline_treated: &pb,
                p_adhere: &pb,
                p_measured: &pr,
                p_uncensored: None,
                q: None,
            },
        );
        assert_eq!(w.n_floored, 1);
        assert_eq!(w.w_total[1], 0.0);
    }

    #[test]
    fn truncation_rules() {
        let mut v = vec![0.0, 5.0, 1.0, 3.0, 2.0, 4.0];
        let mut refs: Vec<&mut f64> = v.iter_mut().collect();
        assert_eq!(truncate(&mut refs, 1.0), Some(5.0));
        assert_eq!(v, vec![0.0, 5.0, 1.0, 3.0, 2.0, 4.0]);

        let mut same = vec![2.0; 10];
        let mut refs: Vec<&mut f64> = same.iter_mut().collect();
        truncate(&mut refs, 0.9);
        assert_eq!(same, vec![2.0; 10]);

        // k = 5 positive, p = 0.6 -> 3rd smallest.
        let mut refs: Vec<&mut f64> = v.iter_mut().collect();
        assert_eq!(truncate(&mut refs, 0.6), Some(3.0));
        assert_eq!(v, vec![0.0, 3.0, 1.0, 3.0, 2.0, 3.0]);
        assert_eq!(order_statistic_index(0.025, 1000), 25);
        assert_eq!(order_statistic_index(0.975, 1000), 975);
        assert_eq!(order_statistic_index(0.95, 1000), 950);
        assert_eq!(order_statistic_index(0.001, 10), 1);
    }
}
