//! Synthetic model with a planted crowded cluster, decoded with and without
//! the crowding-aware correction on shared seeds.
//!
//! The embedding table places `cluster_size` tokens at pairwise cosine
//! `cluster_cosine` (a shared direction plus mutually orthogonal offsets on
//! coordinate axes), `diverse_tokens` tokens on axes of their own, and the
//! rest of the vocabulary at random in the remaining coordinates. The model
//! is a fixed Markov chain: the logits at a step depend only on the previous
//! token. The cluster holds most of the mass with one boosted leader, the
//! diverse tokens compete as isolated alternatives, and the tail stays below
//! the correction threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::analytics::{distinct_n, expected_prob_by_crowding, ProbabilityByCrowding};
use crate::error::{CraegError, Result};
use crate::geometry::EmbeddingTable;
use crate::sampler::{decode_pipeline, CraegConfig, DecodeSettings, LogitSource, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub vocab: usize,
    pub dim: usize,
    pub cluster_size: usize,
    pub cluster_cosine: f64,
    /// Mutually orthogonal tokens outside the cluster.
    pub diverse_tokens: usize,
    pub steps: usize,
    pub trials: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Candidates per step for the crowding statistics.
    pub report_top_k: usize,
    pub distinct_n: usize,
    /// Bins for the probability-by-crowding table.
    pub bins: usize,
    pub seed: u64,
    pub craeg: CraegConfig,
    pub model: ModelShape,
}

/// Logit layout of the synthetic chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub cluster_bias: f64,
    pub cluster_noise: f64,
    pub leader_boost: f64,
    pub diverse_bias: f64,
    pub diverse_noise: f64,
    pub tail_bias: f64,
    pub tail_noise: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            cluster_bias: 3.0,
            cluster_noise: 1.0,
            leader_boost: 2.0,
            diverse_bias: 3.0,
            diverse_noise: 1.0,
            tail_bias: -1.0,
            tail_noise: 0.5,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            vocab: 500,
            dim: 32,
            cluster_size: 20,
            cluster_cosine: 0.9,
            diverse_tokens: 6,
            steps: 64,
            trials: 200,
            temperature: 1.0,
            top_p: 1.0,
            report_top_k: 30,
            distinct_n: 4,
            bins: 10,
            seed: 20_240_601,
            craeg: CraegConfig::default(),
            model: ModelShape::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CraegError::InvalidConfig(m));
        if self.cluster_size < 2 || self.cluster_size + self.diverse_tokens > self.vocab {
            return bad(format!(
                "cluster size {} must be at least 2 and, with {} diverse tokens, fit in vocab = {}",
                self.cluster_size, self.diverse_tokens, self.vocab
            ));
        }
        if !(0.0..1.0).contains(&self.cluster_cosine) {
            return bad(format!(
                "cluster cosine must lie in [0, 1), got {}",
                self.cluster_cosine
            ));
        }
        // One shared axis, one axis per cluster member and per diverse token,
        // at least one axis for the tail.
        let need = self.cluster_size + self.diverse_tokens + 2;
        if self.dim < need {
            return Err(CraegError::Infeasible(format!(
                "dim {} cannot hold a cluster of {} at cosine {} apart from {} diverse tokens \
                 and the tail (need dim >= {need})",
                self.dim, self.cluster_size, self.cluster_cosine, self.diverse_tokens
            )));
        }
        if self.steps == 0 || self.trials == 0 {
            return bad("steps and trials must be positive".into());
        }
        self.craeg.validate()
    }
}

/// Builds the planted-cluster embedding table.
///
/// Tokens `0..cluster_size` form the cluster and the next `diverse_tokens`
/// are the isolated alternatives.
pub fn clustered_table(config: &SimulationConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    let (v, d, m) = (config.vocab, config.dim, config.cluster_size);
    let q = config.diverse_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7ab1e);
    let shared = config.cluster_cosine.sqrt() as f32;
    let own = (1.0 - config.cluster_cosine).sqrt() as f32;
    let mut rows = vec![0f32; v * d];
    for i in 0..m {
        rows[i * d] = shared;
        rows[i * d + 1 + i] = own;
    }
    for k in 0..q {
        rows[(m + k) * d + m + 1 + k] = 1.0;
    }
    for i in (m + q)..v {
        for j in (m + q + 1)..d {
            rows[i * d + j] = normal(&mut rng) as f32;
        }
    }
    EmbeddingTable::from_flat(v, d, rows)
}

/// Markov-chain logit source over the planted table's vocabulary.
#[derive(Debug, Clone)]
pub struct ClusteredModel {
    vocab: usize,
    cluster_size: usize,
    diverse_tokens: usize,
    shape: ModelShape,
    seed: u64,
}

impl ClusteredModel {
    pub fn new(config: &SimulationConfig) -> Self {
        Self {
            vocab: config.vocab,
            cluster_size: config.cluster_size,
            diverse_tokens: config.diverse_tokens,
            shape: config.model.clone(),
            seed: config.seed,
        }
    }

    /// Logits following `previous` (`None` at the first step).
    pub fn logits_after(&self, previous: Option<usize>) -> Vec<f64> {
        let context = previous.map_or(self.vocab as u64, |p| p as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(context)));
        let leader = rng.random_range(0..self.cluster_size);
        let s = &self.shape;
        (0..self.vocab)
            .map(|i| {
                let z = normal(&mut rng);
                if i < self.cluster_size {
                    let boost = if i == leader { s.leader_boost } else { 0.0 };
                    s.cluster_bias + s.cluster_noise * z + boost
                } else if i < self.cluster_size + self.diverse_tokens {
                    s.diverse_bias + s.diverse_noise * z
                } else {
                    s.tail_bias + s.tail_noise * z
                }
            })
            .collect()
    }
}

impl LogitSource for ClusteredModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn logits(&mut self, _step: usize, history: &[usize]) -> Vec<f64> {
        self.logits_after(history.last().copied())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_step_crowding: f64,
    pub mean_entropy: f64,
    pub distinct_n: f64,
    /// Mean token crowding over the top-K candidates of every step.
    pub mean_token_crowding: f64,
    pub prob_by_crowding: ProbabilityByCrowding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub baseline_crowding: f64,
    pub craeg_crowding: f64,
    pub baseline_entropy: f64,
    pub craeg_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Trials where the corrected arm has strictly lower crowding.
    pub lower: usize,
    pub higher: usize,
    pub ties: usize,
    /// Exact two-sided binomial p-value over the untied pairs.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub baseline: ArmSummary,
    pub craeg: ArmSummary,
    pub sign_test: SignTest,
    /// Fraction of corrected steps passed through unchanged.
    pub skipped_fraction: f64,
    pub mean_lambda: f64,
    /// Mean relative gap between achieved and target reduction over corrected steps.
    pub mean_field_error: f64,
    /// Mean achieved reduction at each step index.
    pub reduction_profile: Vec<f64>,
    pub trials: Vec<TrialRow>,
}

/// Exact two-sided sign test on paired differences.
pub fn sign_test(differences: &[f64]) -> SignTest {
    let lower = differences.iter().filter(|&&d| d < 0.0).count();
    let higher = differences.iter().filter(|&&d| d > 0.0).count();
    let ties = differences.len() - lower - higher;
    let n = (lower + higher) as u64;
    let p_value = if n == 0 {
        1.0
    } else {
        let k = lower.max(higher) as u64;
        let binom = Binomial::new(0.5, n).expect("valid binomial");
        // P(X >= k) = 1 - P(X <= k - 1)
        (2.0 * binom.sf(k - 1)).min(1.0)
    };
    SignTest {
        lower,
        higher,
        ties,
        p_value,
    }
}

fn summarize(trajectories: &[Trajectory], config: &SimulationConfig) -> Result<ArmSummary> {
    let n_steps: usize = trajectories.iter().map(|t| t.steps.len()).sum();
    let mean_step_crowding = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.crowding.step_score))
        .sum::<f64>()
        / n_steps as f64;
    let mean_entropy = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.entropy))
        .sum::<f64>()
        / n_steps as f64;
    let tokens: Vec<Vec<usize>> = trajectories.iter().map(|t| t.tokens.clone()).collect();
    let distinct = distinct_n(&tokens, config.distinct_n)?;
    let pairs: Vec<(f64, f64)> = trajectories
        .iter()
        .flat_map(|t| t.steps.iter())
        .flat_map(|s| {
            s.crowding
                .token_scores
                .iter()
                .copied()
                .zip(s.top_k.probs().iter().copied())
        })
        .collect();
    let prob_by_crowding = expected_prob_by_crowding(&pairs, config.bins.max(1))?;
    Ok(ArmSummary {
        mean_step_crowding,
        mean_entropy,
        distinct_n: distinct,
        mean_token_crowding: prob_by_crowding.mean_crowding,
        prob_by_crowding,
    })
}

/// Decodes `trials` paired trajectories and compares the two arms.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let table = clustered_table(config)?;
    let model = ClusteredModel::new(config);

    let runs: Vec<(u64, Trajectory, Trajectory)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = splitmix(config.seed.wrapping_add(trial as u64));
            let base = DecodeSettings {
                temperature: config.temperature,
                top_p: config.top_p,
                steps: config.steps,
                seed,
                report_top_k: config.report_top_k,
                craeg: None,
            };
            let corrected = DecodeSettings {
                craeg: Some(config.craeg.clone()),
                ..base.clone()
            };
            let a = decode_pipeline(&mut model.clone(), &table, &base)?;
            let b = decode_pipeline(&mut model.clone(), &table, &corrected)?;
            Ok((seed, a, b))
        })
        .collect::<Result<_>>()?;

    let baseline: Vec<Trajectory> = runs.iter().map(|r| r.1.clone()).collect();
    let corrected: Vec<Trajectory> = runs.iter().map(|r| r.2.clone()).collect();

    let trials: Vec<TrialRow> = runs
        .iter()
        .enumerate()
        .map(|(trial, (seed, a, b))| TrialRow {
            trial,
            seed: *seed,
            baseline_crowding: a.mean_step_crowding(),
            craeg_crowding: b.mean_step_crowding(),
            baseline_entropy: a.mean_entropy(),
            craeg_entropy: b.mean_entropy(),
        })
        .collect();
    let diffs: Vec<f64> = trials
        .iter()
        .map(|t| t.craeg_crowding - t.baseline_crowding)
        .collect();

    let reports: Vec<_> = corrected
        .iter()
        .flat_map(|t| t.steps.iter().filter_map(|s| s.reweight.as_ref()))
        .collect();
    let active: Vec<_> = reports.iter().filter(|r| !r.is_skipped()).collect();
    let skipped_fraction = 1.0 - active.len() as f64 / reports.len().max(1) as f64;
    let mean_lambda = mean(active.iter().map(|r| r.lambda));
    let mean_field_error = mean(active.iter().filter_map(|r| r.mean_field_error()));
    let reduction_profile = (0..config.steps)
        .map(|step| {
            mean(corrected.iter().filter_map(|t| {
                t.steps
                    .get(step)
                    .and_then(|s| s.reweight.as_ref())
                    .map(|r| r.achieved_reduction)
            }))
        })
        .collect();

    Ok(SimulationReport {
        config: config.clone(),
        baseline: summarize(&baseline, config)?,
        craeg: summarize(&corrected, config)?,
        sign_test: sign_test(&diffs),
        skipped_fraction,
        mean_lambda,
        mean_field_error,
        reduction_profile,
        trials,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cosine_similarity;

    fn small() -> SimulationConfig {
        SimulationConfig {
            vocab: 60,
            dim: 12,
            cluster_size: 6,
            diverse_tokens: 3,
            steps: 16,
            trials: 12,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn planted_geometry() {
        let config = small();
        let t = clustered_table(&config).unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert!((cosine_similarity(&t, i, j).unwrap() - 0.9).abs() < 1e-6);
            }
            for k in 6..60 {
                assert_eq!(cosine_similarity(&t, i, k).unwrap().abs(), 0.0);
            }
        }
        for a in 6..9 {
            for b in 0..60 {
                if a != b {
                    assert_eq!(cosine_similarity(&t, a, b).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_dimension() {
        let config = SimulationConfig {
            dim: 10,
            ..small()
        };
        assert!(matches!(config.validate(), Err(CraegError::Infeasible(_))));
        let config = SimulationConfig {
            cluster_cosine: 1.0,
            ..small()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn model_is_a_fixed_chain() {
        let model = ClusteredModel::new(&small());
        assert_eq!(model.logits_after(Some(3)), model.logits_after(Some(3)));
        assert_ne!(model.logits_after(Some(3)), model.logits_after(Some(4)));
    }

    #[test]
    fn sign_test_values() {
        let t = sign_test(&[-1.0; 10]);
        assert_eq!(t.lower, 10);
        assert!((t.p_value - 2.0 / 1024.0).abs() < 1e-12);
        let t = sign_test(&[0.0, 0.0]);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.ties, 2);
    }

    #[test]
    fn small_run_is_deterministic() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 12);
        assert_eq!(a.reduction_profile.len(), 16);
    }
}
