//! Weighted logistic (Newton/IRLS) and linear (weighted least squares)
//! regression.

use nalgebra::{DMatrix, DVector};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 100;
/// Convergence bound on the scaled score (see [`scaled_score_norm`]).
pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const SEPARATION_BOUND: f64 = 30.0;
const RIDGE: f64 = 1e-10;
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weights must be finite and nonnegative")]
    InvalidWeights,
    #[error("response does not vary among positively weighted rows")]
    NoVariation,
    #[error("no rows with positive weight")]
    NoData,
    #[error("coefficients diverge (|coef| > {SEPARATION_BOUND}): likely separation")]
    Separation,
    #[error("information matrix is singular")]
    Singular,
    #[error("non-finite values in the design or response")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub family: Family,
    /// Set when the information matrix needed the ridge retry.
    pub ridge_applied: bool,
}

impl FitResult {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, GlmError> {
        if x.ncols() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch(format!(
                "design has {} columns, fit has {} coefficients",
                x.ncols(),
                self.coefficients.len()
            )));
        }
        Ok(eta(x, &self.coefficients))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, GlmError> {
        let mut out = self.linear_predictor(x)?;
        if self.family == Family::Logistic {
            out.iter_mut().for_each(|v| *v = expit(*v));
        }
        Ok(out)
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

fn eta(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.nrows()];
    for (j, b) in beta.iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(column(x, j)) {
            *o += b * v;
        }
    }
    out
}

/// `X' diag(w) X`.
fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut h = DMatrix::zeros(p, p);
    let mut wx = vec![0.0; x.nrows()];
    for j in 0..p {
        for ((o, a), wi) in wx.iter_mut().zip(column(x, j)).zip(w) {
            *o = a * wi;
        }
        for k in j..p {
            let s: f64 = wx.iter().zip(column(x, k)).map(|(a, b)| a * b).sum();
            h[(j, k)] = s;
            h[(k, j)] = s;
        }
    }
    h
}

/// `X' v`.
fn cross(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| column(x, j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Per-coordinate normalizer for the score: `sum_i w_i |x_ij| max(1, |y_i|)`.
fn score_scale(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let s: f64 = column(x, j)
                .iter()
                .zip(y)
                .zip(w)
                .map(|((a, yi), wi)| wi * a.abs() * yi.abs().max(1.0))
                .sum();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect()
}

/// Largest score coordinate divided by its scale. The fits report this as
/// `final_gradient_norm`.
pub fn scaled_score_norm(x: &DMatrix<f64>, y: &[f64], w: &[f64], score: &[f64]) -> f64 {
    score_scale(x, y, w)
        .iter()
        .zip(score)
        .map(|(s, g)| g.abs() / s)
        .fold(0.0, f64::max)
}

/// Weighted Bernoulli log-likelihood.
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    eta(x, beta)
        .iter()
        .zip(y)
        .zip(w)
        .map(|((e, yi), wi)| {
            // log(1 + exp(e)) computed stably
            let log1pexp = if *e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            wi * (yi * e - log1pexp)
        })
        .sum()
}

/// Analytic score `X' diag(w) (y - expit(X beta))`.
pub fn logistic_score(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = eta(x, beta)
        .iter()
        .zip(y)
        .zip(w)
        .map(|((e, yi), wi)| wi * (yi - expit(*e)))
        .collect();
    cross(x, &r)
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<(), GlmError> {
    if y.len() != x.nrows() || w.len() != x.nrows() {
        return Err(GlmError::DimensionMismatch(format!(
            "design has {} rows, response {}, weights {}",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    if x.ncols() == 0 {
        return Err(GlmError::DimensionMismatch("design has no columns".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(GlmError::InvalidWeights);
    }
    Ok(())
}

/// Keeps rows with positive weight.
fn positive_rows(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>), GlmError> {
    let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(GlmError::NoData);
    }
    let xs = if keep.len() == x.nrows() {
        x.clone()
    } else {
        x.select_rows(keep.iter())
    };
    let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let ws: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite);
    }
    Ok((xs, ys, ws))
}

/// Keeps rows with positive weight and merges rows with identical
/// covariates into one binomial row carrying the summed weight and the
/// weighted mean response, which leaves the logistic likelihood, score and
/// information unchanged. `None` when there is little to merge.
fn collapse_rows(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
) -> Option<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let (n, p) = x.shape();
    if n < 64 {
        return None;
    }
    let limit = n / 4;
    let mut groups: FxHashMap<Box<[u64]>, usize> = FxHashMap::default();
    let mut first_row = Vec::new();
    let mut sw: Vec<f64> = Vec::new();
    let mut swy: Vec<f64> = Vec::new();
    let mut key = vec![0u64; p];
    let data = x.as_slice();
    for i in 0..n {
        if !(w[i] > 0.0) {
            continue;
        }
        for (j, k) in key.iter_mut().enumerate() {
            *k = data[j * n + i].to_bits();
        }
        let g = match groups.get(key.as_slice()) {
            Some(&g) => g,
            None => {
                if groups.len() >= limit {
                    return None;
                }
                groups.insert(key.clone().into_boxed_slice(), sw.len());
                first_row.push(i);
                sw.push(0.0);
                swy.push(0.0);
                sw.len() - 1
            }
        };
        sw[g] += w[i];
        swy[g] += w[i] * y[i];
    }
    if sw.is_empty() {
        return None;
    }
    let xg = x.select_rows(first_row.iter());
    let yg: Vec<f64> = swy.iter().zip(&sw).map(|(a, b)| a / b).collect();
    if xg.iter().chain(&yg).any(|v| !v.is_finite()) {
        return None;
    }
    Some((xg, yg, sw))
}

/// Solves `h b = g` for symmetric positive (semi)definite `h`, retrying once
/// with a small ridge when the Cholesky pivots are degenerate.
fn spd_solve(h: &DMatrix<f64>, g: &[f64], ridge_applied: &mut bool) -> Result<Vec<f64>, GlmError> {
    let max_diag = h.diagonal().iter().copied().fold(0.0, f64::max);
    if !(max_diag > 0.0 && max_diag.is_finite()) {
        return Err(GlmError::Singular);
    }
    let try_solve = |m: DMatrix<f64>| -> Option<Vec<f64>> {
        let chol = m.cholesky()?;
        let min_pivot = chol.l_dirty().diagonal().iter().copied().fold(f64::INFINITY, f64::min);
        if min_pivot * min_pivot <= PIVOT_TOLERANCE * max_diag {
            return None;
        }
        let sol = chol.solve(&DVector::from_column_slice(g));
        sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
    };
    if let Some(s) = try_solve(h.clone()) {
        return Ok(s);
    }
    let mut ridged = h.clone();
    for i in 0..h.nrows() {
        ridged[(i, i)] += RIDGE * max_diag;
    }
    let chol = ridged.cholesky().ok_or(GlmError::Singular)?;
    let sol = chol.solve(&DVector::from_column_slice(g));
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::Singular);
    }
    *ridge_applied = true;
    Ok(sol.iter().copied().collect())
}

/// Maximum-likelihood weighted logistic regression by Newton's method from
/// zero. After the score criterion is first met one further Newton step is
/// taken so the returned coefficients are polished well below the stopping
/// tolerance. Non-convergence within [`MAX_ITERATIONS`] is reported through
/// `converged = false`.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<FitResult, GlmError> {
    check_inputs(x, y, w)?;
    if y.iter().zip(w).any(|(v, wi)| *wi > 0.0 && *v != 0.0 && *v != 1.0) {
        return Err(GlmError::DimensionMismatch(
            "logistic response must be 0 or 1".into(),
        ));
    }
    let (x, y, w) = match collapse_rows(x, y, w) {
        Some(grouped) => grouped,
        None => positive_rows(x, y, w)?,
    };
    if y.iter().all(|v| *v == 0.0) || y.iter().all(|v| *v == 1.0) {
        return Err(GlmError::NoVariation);
    }
    let p = x.ncols();
    let scale = score_scale(&x, &y, &w);
    let mut beta = vec![0.0; p];
    let mut ridge_applied = false;
    let mut score_met = false;
    let mut iterations = 0;
    let mut grad_norm;
    let mut step_converged = false;
    let mut iw = vec![0.0; y.len()];
    let mut resid = vec![0.0; y.len()];
    loop {
        let e = eta(&x, &beta);
        for i in 0..y.len() {
            let mu = expit(e[i]);
            iw[i] = w[i] * mu * (1.0 - mu);
            resid[i] = w[i] * (y[i] - mu);
        }
        let score = cross(&x, &resid);
        grad_norm = score
            .iter()
            .zip(&scale)
            .map(|(g, s)| g.abs() / s)
            .fold(0.0, f64::max);
        if !grad_norm.is_finite() {
            return Err(GlmError::Separation);
        }
        let now_met = grad_norm <= SCORE_TOLERANCE;
        if (now_met && score_met) || step_converged || iterations >= MAX_ITERATIONS {
            break;
        }
        score_met = now_met;
        let h = weighted_gram(&x, &iw);
        let step = spd_solve(&h, &score, &mut ridge_applied)?;
        iterations += 1;
        let bmax = beta.iter().fold(1.0_f64, |m, b| m.max(b.abs()));
        let smax = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(GlmError::Separation);
        }
        step_converged = smax <= STEP_TOLERANCE * bmax;
    }
    Ok(FitResult {
        coefficients: beta,
        converged: grad_norm <= SCORE_TOLERANCE || step_converged,
        iterations,
        final_gradient_norm: grad_norm,
        family: Family::Logistic,
        ridge_applied,
    })
}

/// Weighted least squares via the Cholesky factor of the weighted normal
/// equations plus one step of iterative refinement.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<FitResult, GlmError> {
    check_inputs(x, y, w)?;
    let (x, y, w) = positive_rows(x, y, w)?;
    let h = weighted_gram(&x, &w);
    let mut ridge_applied = false;
    let wy: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a * b).collect();
    let mut beta = spd_solve(&h, &cross(&x, &wy), &mut ridge_applied)?;
    let residual_score = |beta: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = eta(&x, beta)
            .iter()
            .zip(&y)
            .zip(&w)
            .map(|((e, yi), wi)| wi * (yi - e))
            .collect();
        cross(&x, &r)
    };
    let correction = spd_solve(&h, &residual_score(&beta), &mut ridge_applied)?;
    for (b, c) in beta.iter_mut().zip(&correction) {
        *b += c;
    }
    let grad_norm = scaled_score_norm(&x, &y, &w, &residual_score(&beta));
    Ok(FitResult {
        coefficients: beta,
        converged: grad_norm <= SCORE_TOLERANCE,
        iterations: 2,
        final_gradient_norm: grad_norm,
        family: Family::Linear,
        ridge_applied,
    })
}

pub fn fit(family: Family, x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<FitResult, GlmError> {
    match family {
        Family::Logistic => fit_logistic(x, y, w),
        Family::Linear => fit_linear(x, y, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn with_intercept(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
    }

    fn random_logistic(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        });
        let beta: Vec<f64> = (0..p).map(|j| 0.5 - 0.3 * j as f64).collect();
        let e = eta(&x, &beta);
        let y = e
            .iter()
            .map(|v| if rng.random::<f64>() < expit(*v) { 1.0 } else { 0.0 })
            .collect();
        let w = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        (x, y, w)
    }

    #[test]
    fn intercept_only_logit() {
        let y: Vec<f64> = (0..40).map(|i| if i < 13 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic(&col(&[1.0; 40]), &y, &[1.0; 40]).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - logit(13.0 / 40.0)).abs() < 1e-8);
        assert!(fit.final_gradient_norm <= SCORE_TOLERANCE);
    }

    #[test]
    fn saturated_two_by_two_is_log_odds_ratio() {
        // Cells: x=0: 7 events of 30; x=1: 18 events of 25.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xv, events, total) in [(0.0, 7, 30), (1.0, 18, 25)] {
            for k in 0..total {
                x.push(xv);
                y.push(if k < events { 1.0 } else { 0.0 });
            }
        }
        let n = y.len();
        let fit = fit_logistic(&with_intercept(&x), &y, &vec![1.0; n]).unwrap();
        let (a, b) = (7.0 / 30.0, 18.0 / 25.0);
        assert!((fit.coefficients[0] - logit(a)).abs() < 1e-8);
        assert!((fit.coefficients[1] - (logit(b) - logit(a))).abs() < 1e-8);
    }

    #[test]
    fn duplicated_rows_equal_doubled_weights() {
        let (x, y, w) = random_logistic(3, 60, 3);
        let doubled: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let dup_x = DMatrix::from_fn(120, 3, |i, j| x[(i % 60, j)]);
        let dup_y: Vec<f64> = (0..120).map(|i| y[i % 60]).collect();
        let dup_w: Vec<f64> = (0..120).map(|i| w[i % 60]).collect();
        let a = fit_logistic(&x, &y, &doubled).unwrap();
        let b = fit_logistic(&dup_x, &dup_y, &dup_w).unwrap();
        for (p, q) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn logistic_errors() {
        let x = col(&[1.0; 4]);
        assert_eq!(
            fit_logistic(&x, &[1.0; 4], &[1.0; 4]).unwrap_err(),
            GlmError::NoVariation
        );
        assert_eq!(
            fit_logistic(&x, &[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap_err(),
            GlmError::NoVariation
        );
        let sep = with_intercept(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(
            fit_logistic(&sep, &[0.0, 0.0, 1.0, 1.0], &[1.0; 4]).unwrap_err(),
            GlmError::Separation
        );
        let collinear = DMatrix::from_fn(4, 2, |_, _| 1.0);
        let fit = fit_logistic(&collinear, &[0.0, 1.0, 1.0, 0.0], &[1.0; 4]).unwrap();
        assert!(fit.ridge_applied);
        assert_eq!(
            fit_logistic(&x, &[1.0, 0.0], &[1.0; 4]).unwrap_err(),
            GlmError::DimensionMismatch("design has 4 rows, response 2, weights 4".into())
        );
        assert_eq!(
            fit_logistic(&x, &[1.0, 0.0, 1.0, 0.0], &[1.0, -1.0, 1.0, 1.0]).unwrap_err(),
            GlmError::InvalidWeights
        );
    }

    #[test]
    fn linear_closed_forms() {
        let y = [3.0, 5.0, 10.0];
        let w = [1.0, 2.0, 1.0];
        let fit = fit_linear(&col(&[1.0; 3]), &y, &w).unwrap();
        assert!((fit.coefficients[0] - 23.0 / 4.0).abs() < 1e-12);

        let xs = [0.0, 1.5, 2.0, 7.0, -3.0];
        let line: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = fit_linear(&with_intercept(&xs), &line, &[0.3, 1.0, 2.0, 5.0, 0.1]).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn linear_singular() {
        let x = DMatrix::from_fn(3, 2, |i, j| if j == 0 { 1.0 } else { (i as f64) * 0.0 });
        let fit = fit_linear(&x, &[1.0, 2.0, 3.0], &[1.0; 3]);
        // A zero column is rescued by the ridge retry; an all-zero design is not.
        assert!(fit.unwrap().ridge_applied);
        let zero = DMatrix::zeros(3, 1);
        assert_eq!(fit_linear(&zero, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap_err(), GlmError::Singular);
    }

    #[test]
    fn predict_contract() {
        let fit = FitResult {
            coefficients: vec![0.0, 0.0],
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
            family: Family::Logistic,
            ridge_applied: false,
        };
        let x = with_intercept(&[1.0, -4.0, 9.0]);
        assert_eq!(fit.predict(&x).unwrap(), vec![0.5; 3]);
        assert!(matches!(fit.predict(&col(&[1.0])), Err(GlmError::DimensionMismatch(_))));

        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 0.5, 3.0, 2.0, 6.0];
        let w = [1.0, 2.0, 0.5, 1.0, 3.0];
        let design = with_intercept(&xs);
        let lin = fit_linear(&design, &y, &w).unwrap();
        let pred = lin.predict(&design).unwrap();
        let resid_mean: f64 = pred.iter().zip(&y).zip(&w).map(|((p, yi), wi)| wi * (yi - p)).sum();
        assert!(resid_mean.abs() < 1e-10);
    }

    #[test]
    fn logistic_predictions_match_fitted_means() {
        let (x, y, w) = random_logistic(11, 200, 3);
        let fit = fit_logistic(&x, &y, &w).unwrap();
        let pred = fit.predict(&x).unwrap();
        let mu: Vec<f64> = eta(&x, &fit.coefficients).iter().map(|e| expit(*e)).collect();
        for (a, b) in pred.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn score_vanishes_and_matches_finite_differences(seed in 0u64..10_000) {
            let (x, y, w) = random_logistic(seed, 150, 4);
            let fit = fit_logistic(&x, &y, &w).unwrap();
            prop_assert!(fit.converged);
            let score = logistic_score(&x, &y, &w, &fit.coefficients);
            prop_assert!(scaled_score_norm(&x, &y, &w, &score) <= 1e-8);
            // Gradient check at a point away from the optimum.
            let probe: Vec<f64> = fit.coefficients.iter().map(|b| b + 0.1).collect();
            let analytic = logistic_score(&x, &y, &w, &probe);
            let scale = probe.iter().fold(1.0_f64, |m, b| m.max(b.abs()));
            let h = 1e-6 * scale;
            for j in 0..probe.len() {
                let mut up = probe.clone();
                let mut down = probe.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (logistic_log_likelihood(&x, &y, &w, &up)
                    - logistic_log_likelihood(&x, &y, &w, &down)) / (2.0 * h);
                let total_w: f64 = w.iter().sum();
                prop_assert!((fd - analytic[j]).abs() / total_w <= 1e-5);
            }
        }

        #[test]
        fn weight_scaling_and_zero_rows(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let (x, y, mut w) = random_logistic(seed, 120, 3);
            let base = fit_logistic(&x, &y, &w).unwrap();
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let s = fit_logistic(&x, &y, &scaled).unwrap();
            for (a, b) in base.coefficients.iter().zip(&s.coefficients) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            for i in (0..120).step_by(7) { w[i] = 0.0; }
            let keep: Vec<usize> = (0..120).filter(|i| i % 7 != 0).collect();
            let zero = fit_logistic(&x, &y, &w).unwrap();
            let dropped = fit_logistic(
                &x.select_rows(keep.iter()),
                &keep.iter().map(|&i| y[i]).collect::<Vec<_>>(),
                &keep.iter().map(|&i| w[i]).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert_eq!(zero.coefficients, dropped.coefficients);
        }
    }
}
