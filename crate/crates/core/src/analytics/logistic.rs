//! Maximum-likelihood logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{CraegError, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Hit the iteration cap, typically from (quasi-)separation.
    MaxIterations,
    /// The information matrix could not be inverted.
    Singular,
}

/// Coefficient table, intercept first when the design has an intercept column first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub odds_ratios: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
}

/// Fits `P(y = 1 | x) = 1 / (1 + exp(-x . beta))` on the rows of `design`.
///
/// Newton steps on the log-likelihood until the gradient norm is at most
/// 1e-8. Standard errors come from the inverse observed information at the
/// final estimate, p-values from two-sided Wald tests. A singular
/// information matrix or the iteration cap is flagged in `status` and the
/// last estimate is still returned; standard errors are NaN when the
/// information cannot be inverted.
pub fn logistic_fit(design: &[Vec<f64>], y: &[bool]) -> Result<RegressionResult> {
    let n = design.len();
    if n == 0 {
        return Err(CraegError::InvalidArgument("empty design matrix".into()));
    }
    if y.len() != n {
        return Err(CraegError::LengthMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let k = design[0].len();
    if k == 0 {
        return Err(CraegError::InvalidArgument("design has no columns".into()));
    }
    if let Some(row) = design.iter().find(|r| r.len() != k) {
        return Err(CraegError::LengthMismatch {
            expected: k,
            actual: row.len(),
        });
    }
    let x = DMatrix::from_fn(n, k, |i, j| design[i][j]);
    let target = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });

    let mut beta = DVector::<f64>::zeros(k);
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    let mut information = DMatrix::<f64>::zeros(k, k);
    let mut last_step = 0.0f64;

    for iter in 0..=MAX_ITERATIONS {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let gradient = x.transpose() * (&target - &mu);
        let weights = mu.map(|m| m * (1.0 - m));
        information = weighted_gram(&x, &weights);
        // Under separation the gradient vanishes while the estimate keeps
        // drifting, so a small gradient alone is not convergence.
        let settled = last_step <= STEP_TOL * (1.0 + beta.norm());
        if gradient.norm() <= GRADIENT_TOL && settled {
            status = FitStatus::Converged;
            iterations = iter;
            break;
        }
        if iter == MAX_ITERATIONS {
            iterations = iter;
            break;
        }
        match information.clone().cholesky() {
            Some(chol) => {
                let step = chol.solve(&gradient);
                last_step = step.norm();
                beta += step;
            }
            None => {
                status = FitStatus::Singular;
                iterations = iter;
                break;
            }
        }
    }

    let covariance = information.clone().cholesky().map(|c| c.inverse());
    if covariance.is_none() {
        status = FitStatus::Singular;
    }
    let standard_errors: Vec<f64> = (0..k)
        .map(|j| covariance.as_ref().map_or(f64::NAN, |c| c[(j, j)].sqrt()))
        .collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let z_values: Vec<f64> = coefficients
        .iter()
        .zip(&standard_errors)
        .map(|(b, se)| b / se)
        .collect();
    let p_values = z_values
        .iter()
        .map(|z| {
            if z.is_nan() {
                f64::NAN
            } else {
                erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
            }
        })
        .collect();
    let odds_ratios = coefficients.iter().map(|b| b.exp()).collect();
    let eta = &x * &beta;
    let log_likelihood = eta
        .iter()
        .zip(y)
        .map(|(&e, &label)| if label { -softplus(-e) } else { -softplus(e) })
        .sum();

    Ok(RegressionResult {
        coefficients,
        standard_errors,
        z_values,
        p_values,
        odds_ratios,
        log_likelihood,
        converged: status == FitStatus::Converged,
        status,
        iterations,
    })
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn weighted_gram(x: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    x.transpose() * scaled
}
