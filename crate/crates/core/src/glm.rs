//! Weighted logistic regression with offsets and fractional responses.
//!
//! Fitting is plain IRLS (Newton on the Bernoulli log-likelihood) with step
//! halving. Responses may lie anywhere in `[0, 1]`, which is what the
//! sequential-regression pseudo-outcomes need.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::math::{expit, logit};

/// Lower/upper bound applied to every fitted probability returned by [`predict`].
pub const PROB_FLOOR: f64 = 0.005;
pub const PROB_CEIL: f64 = 0.995;
/// Coefficients are kept within `[-COEF_LIMIT, COEF_LIMIT]`.
pub const COEF_LIMIT: f64 = 20.0;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const DEVIANCE_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-8;

/// Dense row-major design matrix. Column 0 is the intercept by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(invalid("design data length does not match n * p"));
        }
        if p == 0 {
            return Err(invalid("design needs at least one column"));
        }
        Ok(Self { n, p, data })
    }

    /// Builds `[1, row...]` rows.
    pub fn with_intercept<'a, I>(rows: I, p_without_intercept: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let p = p_without_intercept + 1;
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            debug_assert_eq!(row.len(), p_without_intercept);
            data.push(1.0);
            data.extend_from_slice(row);
            n += 1;
        }
        Self { n, p, data }
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Self {
        Self { n, p: 1, data: vec![1.0; n] }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per remaining design column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Set when any coefficient hit the `±20` limit.
    pub clipped: bool,
    pub n_iter: usize,
    pub deviance: f64,
}

impl LogisticFit {
    #[inline]
    pub fn linear_predictor(&self, x_row: &[f64]) -> f64 {
        self.coefficients.iter().zip(x_row).map(|(b, x)| b * x).sum()
    }
}

/// Fitted probability `expit(x·β)` clipped to `[0.005, 0.995]`.
#[inline]
pub fn predict(fit: &LogisticFit, x_row: &[f64]) -> f64 {
    expit(fit.linear_predictor(x_row)).clamp(PROB_FLOOR, PROB_CEIL)
}

fn deviance(y: &[f64], w: &[f64], eta: &[f64]) -> f64 {
    let mut dev = 0.0;
    for ((&yi, &wi), &e) in y.iter().zip(w).zip(eta) {
        if wi == 0.0 {
            continue;
        }
        // log(1 + exp(e)) computed stably
        let log1pexp = if e > 0.0 { e + libm::log1p(libm::exp(-e)) } else { libm::log1p(libm::exp(e)) };
        // -loglik = log(1+e^eta) - y*eta
        dev += wi * (log1pexp - yi * e);
    }
    2.0 * dev
}

fn compute_eta(x: &Design, beta: &[f64], offset: Option<&[f64]>, eta: &mut [f64]) {
    for (i, e) in eta.iter_mut().enumerate() {
        let row = x.row(i);
        let mut v: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        if let Some(off) = offset {
            v += off[i];
        }
        *e = v;
    }
}

/// Maximizes the weighted (quasi-)Bernoulli log-likelihood of `y` on `x` with
/// an optional offset on the logit scale.
pub fn fit_logistic(x: &Design, y: &[f64], weights: &[f64], offset: Option<&[f64]>) -> Result<LogisticFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(invalid("logistic fit needs at least one row"));
    }
    if y.len() != n || weights.len() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(invalid("logistic fit dimensions disagree"));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if y.iter().any(|v| v.is_nan()) || weights.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("responses or weights"));
    }
    if offset.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("offset"));
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(invalid("responses must lie in [0, 1]"));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::ZeroWeight);
    }

    let ybar = y.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() / total_w;
    let mut beta = vec![0.0; p];

    // Complete separation in the response itself: the likelihood increases
    // without bound along the intercept, so stop at the coefficient limit.
    let all_one = y.iter().zip(weights).all(|(&yi, &wi)| wi == 0.0 || yi >= 1.0);
    let all_zero = y.iter().zip(weights).all(|(&yi, &wi)| wi == 0.0 || yi <= 0.0);
    if all_one || all_zero {
        beta[0] = if all_one { COEF_LIMIT } else { -COEF_LIMIT };
        let mut eta = vec![0.0; n];
        compute_eta(x, &beta, offset, &mut eta);
        return Ok(LogisticFit {
            coefficients: beta,
            converged: true,
            clipped: true,
            n_iter: 0,
            deviance: deviance(y, weights, &eta),
        });
    }

    if offset.is_none() {
        beta[0] = logit(ybar);
    }
    let mut eta = vec![0.0; n];
    compute_eta(x, &beta, offset, &mut eta);
    let mut dev = deviance(y, weights, &eta);

    let mut converged = false;
    let mut clipped = false;
    let mut dev_settled = false;
    let mut n_iter = 0;
    let mut score = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut trial = vec![0.0; p];
    let mut trial_eta = vec![0.0; n];

    for iter in 0..=MAX_ITER {
        score.iter_mut().for_each(|s| *s = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for i in 0..n {
            let wi = weights[i];
            if wi == 0.0 {
                continue;
            }
            let pi = expit(eta[i]);
            let r = wi * (y[i] - pi);
            let v = wi * pi * (1.0 - pi);
            let row = x.row(i);
            for j in 0..p {
                score[j] += r * row[j];
                let vj = v * row[j];
                for k in 0..=j {
                    hess[j * p + k] += vj * row[k];
                }
            }
        }
        let max_score = score.iter().fold(0.0f64, |m, s| m.max(libm::fabs(*s)));
        if max_score < SCORE_TOL || dev_settled {
            converged = true;
            break;
        }
        if iter == MAX_ITER {
            break;
        }
        n_iter = iter + 1;

        for j in 0..p {
            for k in 0..j {
                hess[k * p + j] = hess[j * p + k];
            }
        }
        let step = solve_spd(&hess, &score, p);
        let mut t = 1.0;
        let mut accepted = false;
        let mut hit_limit = false;
        for _ in 0..40 {
            hit_limit = false;
            for j in 0..p {
                let b = beta[j] + t * step[j];
                if b > COEF_LIMIT || b < -COEF_LIMIT {
                    hit_limit = true;
                }
                trial[j] = b.clamp(-COEF_LIMIT, COEF_LIMIT);
            }
            compute_eta(x, &trial, offset, &mut trial_eta);
            let trial_dev = deviance(y, weights, &trial_eta);
            if trial_dev <= dev + 1e-12 * libm::fabs(dev) {
                let moved = trial.iter().zip(&beta).any(|(a, b)| a != b);
                let rel = libm::fabs(dev - trial_dev) / (libm::fabs(trial_dev) + 0.1);
                beta.copy_from_slice(&trial);
                eta.copy_from_slice(&trial_eta);
                dev = trial_dev;
                accepted = true;
                if rel < DEVIANCE_TOL || !moved {
                    dev_settled = true;
                }
                break;
            }
            t *= 0.5;
        }
        clipped |= hit_limit;
        if !accepted {
            // no descent possible along the Newton direction: at numerical optimum
            dev_settled = true;
        }
    }

    clipped |= beta.iter().any(|b| libm::fabs(*b) >= COEF_LIMIT);
    Ok(LogisticFit { coefficients: beta, converged, clipped, n_iter, deviance: dev })
}

/// Solves `(H + ridge I) d = g` for a symmetric positive semidefinite `H`.
fn solve_spd(h: &[f64], g: &[f64], p: usize) -> Vec<f64> {
    let mut ridge = RIDGE;
    loop {
        let mut m = DMatrix::from_row_slice(p, p, h);
        for j in 0..p {
            m[(j, j)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(&DVector::from_column_slice(g));
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
        }
        ridge *= 100.0;
        if ridge > 1e6 {
            return vec![0.0; p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_one_response_hits_limit() {
        let rows: Vec<[f64; 1]> = (0..6).map(|i| [i as f64]).collect();
        let x = Design::with_intercept(rows.iter().map(|r| &r[..]), 1);
        let fit = fit_logistic(&x, &[1.0; 6], &[1.0; 6], None).unwrap();
        assert_eq!(fit.coefficients, vec![20.0, 0.0]);
        assert!(fit.converged && fit.clipped);
        assert_eq!(predict(&fit, &[1.0, 3.0]), 0.995);
    }

    #[test]
    fn intercept_only_matches_mean() {
        let x = Design::intercept_only(4);
        let fit = fit_logistic(&x, &[0.0, 1.0, 1.0, 0.0], &[1.0; 4], None).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let fit = LogisticFit { coefficients: vec![0.0, 0.0], converged: true, clipped: false, n_iter: 0, deviance: 0.0 };
        assert_eq!(predict(&fit, &[1.0, 5.0]), 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Design::intercept_only(2);
        assert!(matches!(fit_logistic(&x, &[f64::NAN, 1.0], &[1.0; 2], None), Err(Error::NonFinite(_))));
        assert_eq!(fit_logistic(&x, &[0.0, 1.0], &[0.0; 2], None), Err(Error::ZeroWeight));
        assert!(fit_logistic(&x, &[0.0, 1.5], &[1.0; 2], None).is_err());
    }

    #[test]
    fn fractional_weighted_intercept_with_offset() {
        // intercept-only with offset: solves sum w (y - expit(off + b)) = 0
        let x = Design::intercept_only(3);
        let y = [0.2, 0.7, 0.9];
        let w = [1.0, 2.0, 0.5];
        let off = [0.3, -0.4, 1.0];
        let fit = fit_logistic(&x, &y, &w, Some(&off)).unwrap();
        let b = fit.coefficients[0];
        let s: f64 = (0..3).map(|i| w[i] * (y[i] - expit(off[i] + b))).sum();
        assert!(s.abs() < 1e-9, "score {s}");
    }
}
