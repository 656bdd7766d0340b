//! Crowding-aware reweighting of a next-token distribution.
//!
//! One step runs in five stages:
//!
//! 1. pick the correction set `S = { i : p_i >= epsilon }`;
//! 2. score token crowding inside `S` and form `C_i = w(p_i) * crowd(i)`;
//! 3. choose the strength `lambda` so that roughly `tau * sum_S p` of mass is
//!    removed, and set `alpha_i = 1 / (1 + lambda * C_i)`;
//! 4. scale each `p_i` in `S` by `alpha_i`;
//! 5. rescale `S` back to its original mass and leave the tail untouched.

use serde::{Deserialize, Serialize};

use crate::error::{CraegError, Result};
use crate::geometry::{
    crowding_from_similarities, pairwise_abs_cosine, EmbeddingTable, NextTokenDistribution,
    Weighting, FULL_MASS_TOL,
};

/// How the per-step strength factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum LambdaMode {
    /// Closed-form mean-field strength targeting a `tau` fraction of the set mass.
    #[default]
    Adaptive,
    /// Constant strength on every step; `tau` is then only logged.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CraegConfig {
    /// Fraction of correction-set mass to remove, in `[0, 1]`.
    pub tau: f64,
    /// Probability threshold for the correction set.
    pub epsilon: f64,
    pub weighting: Weighting,
    pub lambda_mode: LambdaMode,
    /// Steps whose mean weight is at or below this are left untouched.
    pub crowd_floor: f64,
    /// Upper clamp on `tau * sum_S p` in the strength denominator.
    pub mass_cap: f64,
}

impl Default for CraegConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            epsilon: 0.01,
            weighting: Weighting::Exponential,
            lambda_mode: LambdaMode::Adaptive,
            crowd_floor: 1e-12,
            mass_cap: 1.0 - 1e-6,
        }
    }
}

impl CraegConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn with_lambda_mode(mut self, mode: LambdaMode) -> Self {
        self.lambda_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CraegError::InvalidConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CraegError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(v.is_finite() && v > 0.0) {
                return Err(CraegError::InvalidConfig(format!(
                    "fixed lambda must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.crowd_floor >= 0.0 && self.crowd_floor.is_finite()) {
            return Err(CraegError::InvalidConfig(format!(
                "crowd_floor must be non-negative, got {}",
                self.crowd_floor
            )));
        }
        if !(self.mass_cap > 0.0 && self.mass_cap < 1.0) {
            return Err(CraegError::InvalidConfig(format!(
                "mass_cap must lie in (0, 1), got {}",
                self.mass_cap
            )));
        }
        Ok(())
    }
}

/// Why a step was passed through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Fewer than two tokens reach the threshold.
    SmallCorrectionSet,
    /// `tau` is zero.
    ZeroStrength,
    /// Mean weight at or below the crowding floor.
    NoCrowding,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SkipReason::SmallCorrectionSet => "small_correction_set",
            SkipReason::ZeroStrength => "zero_strength",
            SkipReason::NoCrowding => "no_crowding",
        })
    }
}

/// Per-step diagnostics of one reweighting.
///
/// Vectors are parallel to `correction_set`, which holds vocabulary ids in
/// descending probability order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightReport {
    pub correction_set: Vec<usize>,
    pub token_crowding: Vec<f64>,
    pub crowding_weights: Vec<f64>,
    pub lambda: f64,
    pub alphas: Vec<f64>,
    /// `tau * sum_S p`
    pub target_reduction: f64,
    /// `sum_S p_i * C_i`
    pub mean_weight: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    /// `sum_S p_i * (1 - alpha_i)`
    pub achieved_reduction: f64,
    pub skipped: Option<SkipReason>,
}

impl ReweightReport {
    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }

    /// Relative gap between achieved and target reduction; `None` when the target is zero.
    pub fn mean_field_error(&self) -> Option<f64> {
        (self.target_reduction > 0.0).then(|| {
            (self.achieved_reduction - self.target_reduction).abs() / self.target_reduction
        })
    }
}

/// Positions of `dist` with probability at least `epsilon`, by descending probability.
pub fn select_correction_set(dist: &NextTokenDistribution, epsilon: f64) -> Vec<usize> {
    dist.positions_at_least(epsilon)
}

/// Closed-form strength for one step together with its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub target_reduction: f64,
    pub mean_weight: f64,
}

/// Mean-field strength factor.
///
/// Replacing every `C_i` by `mu = sum p_i C_i` in the reduction equation gives
/// `lambda = delta / (mu * (1 - delta))` with `delta = tau * sum p`. `delta` is
/// clamped at `mass_cap` inside the denominator. Returns `None` when `mu` is at
/// or below `crowd_floor`, in which case the step should not be corrected.
pub fn compute_lambda(
    probs: &[f64],
    weights: &[f64],
    tau: f64,
    crowd_floor: f64,
    mass_cap: f64,
) -> Option<LambdaEstimate> {
    debug_assert_eq!(probs.len(), weights.len());
    let mass: f64 = probs.iter().sum();
    let target_reduction = tau * mass;
    let mean_weight: f64 = probs.iter().zip(weights).map(|(p, c)| p * c).sum();
    if !(mean_weight > crowd_floor) {
        return None;
    }
    let lambda = target_reduction / (mean_weight * (1.0 - target_reduction.min(mass_cap)));
    Some(LambdaEstimate {
        lambda,
        target_reduction,
        mean_weight,
    })
}

/// `alpha_i = 1 / (1 + lambda * w(p_i) * crowd_i)`.
pub fn correction_factors(
    probs: &[f64],
    crowding: &[f64],
    lambda: f64,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    if probs.len() != crowding.len() {
        return Err(CraegError::LengthMismatch {
            expected: probs.len(),
            actual: crowding.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(CraegError::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(probs
        .iter()
        .zip(crowding)
        .map(|(&p, &c)| 1.0 / (1.0 + lambda * weighting.weight(p) * c))
        .collect())
}

/// Reweights a full next-token distribution (probabilities summing to 1).
pub fn reweight(
    dist: &NextTokenDistribution,
    table: &EmbeddingTable,
    config: &CraegConfig,
) -> Result<(NextTokenDistribution, ReweightReport)> {
    if dist.is_restricted() || (dist.mass() - 1.0).abs() > FULL_MASS_TOL {
        return Err(CraegError::InvalidDistribution(format!(
            "reweighting needs a full distribution summing to 1, got mass {}",
            dist.mass()
        )));
    }
    reweight_candidates(dist, table, config)
}

/// Reweights a distribution that may carry only part of the vocabulary.
///
/// Only tokens at or above `epsilon` are touched, so a payload that contains
/// every such token gives the same result as the full distribution. Used by
/// the streaming server, which receives truncated payloads.
pub fn reweight_candidates(
    dist: &NextTokenDistribution,
    table: &EmbeddingTable,
    config: &CraegConfig,
) -> Result<(NextTokenDistribution, ReweightReport)> {
    config.validate()?;
    dist.check_vocab(table.vocab_size())?;

    let positions = select_correction_set(dist, config.epsilon);
    let probs: Vec<f64> = positions.iter().map(|&i| dist.probs()[i]).collect();
    let ids: Vec<usize> = positions.iter().map(|&i| dist.token_ids()[i]).collect();
    let mass_before: f64 = probs.iter().sum();
    let target_reduction = config.tau * mass_before;

    let mut report = ReweightReport {
        correction_set: ids.clone(),
        token_crowding: Vec::new(),
        crowding_weights: Vec::new(),
        lambda: 0.0,
        alphas: vec![1.0; ids.len()],
        target_reduction,
        mean_weight: 0.0,
        mass_before,
        mass_after: mass_before,
        achieved_reduction: 0.0,
        skipped: None,
    };

    if ids.len() <= 1 {
        report.skipped = Some(SkipReason::SmallCorrectionSet);
        return Ok((dist.clone(), report));
    }

    let sims = pairwise_abs_cosine(table, &ids)?;
    let crowding = crowding_from_similarities(&sims, &probs);
    let weights: Vec<f64> = probs
        .iter()
        .zip(&crowding)
        .map(|(&p, &c)| config.weighting.weight(p) * c)
        .collect();
    let mean_weight: f64 = probs.iter().zip(&weights).map(|(p, c)| p * c).sum();
    report.token_crowding = crowding;
    report.crowding_weights = weights;
    report.mean_weight = mean_weight;

    if config.tau == 0.0 {
        report.skipped = Some(SkipReason::ZeroStrength);
        return Ok((dist.clone(), report));
    }
    if !(mean_weight > config.crowd_floor) {
        report.skipped = Some(SkipReason::NoCrowding);
        return Ok((dist.clone(), report));
    }

    let lambda = match config.lambda_mode {
        LambdaMode::Fixed(value) => value,
        LambdaMode::Adaptive => {
            compute_lambda(
                &probs,
                &report.crowding_weights,
                config.tau,
                config.crowd_floor,
                config.mass_cap,
            )
            .expect("mean weight already checked against the floor")
            .lambda
        }
    };
    let alphas: Vec<f64> = report
        .crowding_weights
        .iter()
        .map(|c| 1.0 / (1.0 + lambda * c))
        .collect();

    let penalized: Vec<f64> = probs.iter().zip(&alphas).map(|(p, a)| p * a).collect();
    let penalized_mass: f64 = penalized.iter().sum();
    let scale = mass_before / penalized_mass;

    let mut out = dist.probs().to_vec();
    let mut mass_after = 0.0;
    for (&pos, &q) in positions.iter().zip(&penalized) {
        let v = q * scale;
        out[pos] = v;
        mass_after += v;
    }

    report.achieved_reduction = probs.iter().zip(&alphas).map(|(p, a)| p * (1.0 - a)).sum();
    report.lambda = lambda;
    report.alphas = alphas;
    report.mass_after = mass_after;
    Ok((dist.with_probs(out), report))
}
