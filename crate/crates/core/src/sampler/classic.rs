use rand::Rng;

use crate::error::{CraegError, Result};
use crate::geometry::NextTokenDistribution;

/// Softmax of `logits / temperature`, stabilized by subtracting the maximum.
pub fn temperature_scale(logits: &[f64], temperature: f64) -> Result<NextTokenDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CraegError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(CraegError::InvalidArgument("empty logit vector".into()));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(CraegError::InvalidArgument(
            "logits must not contain NaN or +inf".into(),
        ));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CraegError::InvalidArgument("all logits are -inf".into()));
    }
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    NextTokenDistribution::dense(exps.into_iter().map(|e| e / total).collect())
}

/// Nucleus filter: keeps the descending-probability prefix whose mass first
/// reaches `top_p` (the crossing token included) and renormalizes it.
///
/// Dropped tokens stay in the output with probability 0.
pub fn top_p_filter(dist: &NextTokenDistribution, top_p: f64) -> Result<NextTokenDistribution> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(CraegError::InvalidArgument(format!(
            "top-p must lie in (0, 1], got {top_p}"
        )));
    }
    if top_p == 1.0 {
        return Ok(dist.clone());
    }
    let threshold = top_p * dist.mass();
    let mut kept = vec![false; dist.len()];
    let mut cumulative = 0.0;
    for i in dist.descending_order() {
        kept[i] = true;
        cumulative += dist.probs()[i];
        if cumulative >= threshold - 1e-12 {
            break;
        }
    }
    let probs: Vec<f64> = dist
        .probs()
        .iter()
        .zip(&kept)
        .map(|(&p, &k)| if k { p / cumulative * dist.mass() } else { 0.0 })
        .collect();
    Ok(dist.with_probs(probs))
}

/// Inverse-CDF draw over the support of `dist`; returns the vocabulary id.
pub fn sample_token<R: Rng + ?Sized>(dist: &NextTokenDistribution, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * dist.mass();
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (id, p) in dist.iter() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_positive = Some(id);
        if u < cumulative {
            return id;
        }
    }
    last_positive.unwrap_or_else(|| dist.token_ids()[0])
}
