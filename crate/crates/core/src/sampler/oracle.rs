//! Exact strength factor by root finding.
//!
//! The closed-form strength is a mean-field approximation. This module solves
//! the reduction equation `sum p_i * lambda C_i / (1 + lambda C_i) = tau * sum p`
//! exactly by bisection so the approximation error can be measured.

use crate::error::{CraegError, Result};

/// Mass removed from the set at strength `lambda`.
pub fn reduction_at(probs: &[f64], weights: &[f64], lambda: f64) -> f64 {
    probs
        .iter()
        .zip(weights)
        .map(|(&p, &c)| p * (lambda * c) / (1.0 + lambda * c))
        .sum()
}

/// Root of the reduction equation, to an absolute residual of at most 1e-10.
///
/// The reduction is increasing in `lambda` and tends to the mass carried by
/// tokens with `C_i > 0`; targets at or above that supremum are infeasible.
pub fn exact_lambda(probs: &[f64], weights: &[f64], tau: f64) -> Result<f64> {
    if probs.len() != weights.len() {
        return Err(CraegError::LengthMismatch {
            expected: probs.len(),
            actual: weights.len(),
        });
    }
    let target = tau * probs.iter().sum::<f64>();
    if target == 0.0 {
        return Ok(0.0);
    }
    let supremum: f64 = probs
        .iter()
        .zip(weights)
        .filter(|(_, &c)| c > 0.0)
        .map(|(p, _)| p)
        .sum();
    if target >= supremum {
        return Err(CraegError::Infeasible(format!(
            "target reduction {target} is not below the attainable supremum {supremum}"
        )));
    }

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while reduction_at(probs, weights, hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(CraegError::Infeasible("no finite bracket for lambda".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reduction_at(probs, weights, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (
        (reduction_at(probs, weights, lo) - target).abs(),
        (reduction_at(probs, weights, hi) - target).abs(),
    );
    let (root, residual) = if r_lo <= r_hi { (lo, r_lo) } else { (hi, r_hi) };
    if residual > 1e-10 {
        return Err(CraegError::Infeasible(format!(
            "bisection stalled with residual {residual:e}"
        )));
    }
    Ok(root)
}
