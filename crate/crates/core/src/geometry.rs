//! Token embedding storage and embedding-space crowding scores.
//!
//! Crowding of token `i` at one decoding step is the probability-weighted sum
//! of absolute cosine similarities between `i` and every other candidate:
//!
//! ```text
//! crowd(i) = sum_{j != i} p_j * |cos(e_i, e_j)|
//! ```
//!
//! The step score is the expectation of `crowd(i)` under the step
//! distribution, and the sequence score is the mean step score over a
//! generation. Every sum here uses the raw probabilities handed in, so a
//! top-K restricted distribution is scored without renormalization.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CraegError, Result};

/// Rows whose Euclidean norm falls below this are treated as having no direction.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the total of a full next-token distribution.
pub const FULL_MASS_TOL: f64 = 1e-6;

/// Which matrix of the model an embedding table was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    #[default]
    Unspecified,
    InputEmbedding,
    OutputProjection,
}

impl MatrixSource {
    pub fn code(self) -> u8 {
        match self {
            MatrixSource::Unspecified => 0,
            MatrixSource::InputEmbedding => 1,
            MatrixSource::OutputProjection => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MatrixSource::Unspecified),
            1 => Some(MatrixSource::InputEmbedding),
            2 => Some(MatrixSource::OutputProjection),
            _ => None,
        }
    }
}

/// Static `vocab_size x dim` token embedding matrix with cached row norms.
///
/// Rows are stored single precision (the on-disk dtype); norms and every
/// derived quantity are computed in double precision. The table is immutable
/// once built and can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab_size: usize,
    dim: usize,
    rows: Vec<f32>,
    norms: Vec<f64>,
    source: MatrixSource,
}

impl EmbeddingTable {
    /// Builds a table from a row-major buffer of `vocab_size * dim` values.
    pub fn from_flat(vocab_size: usize, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(CraegError::InvalidTable(format!(
                "vocab_size and dim must be positive (got {vocab_size} x {dim})"
            )));
        }
        let expected = vocab_size
            .checked_mul(dim)
            .ok_or_else(|| CraegError::InvalidTable("vocab_size * dim overflows".into()))?;
        if rows.len() != expected {
            return Err(CraegError::LengthMismatch {
                expected,
                actual: rows.len(),
            });
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(CraegError::InvalidTable(format!(
                "non-finite entry at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        let norms: Vec<f64> = rows
            .chunks_exact(dim)
            .map(|row| row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt())
            .collect();
        let zero_rows = norms.iter().filter(|&&n| n < ZERO_NORM).count();
        if zero_rows > 0 {
            log::warn!(
                "{zero_rows} of {vocab_size} embedding rows have zero norm; \
                 their cosine with any token is taken as 0"
            );
        }
        Ok(Self {
            vocab_size,
            dim,
            rows,
            norms,
            source: MatrixSource::Unspecified,
        })
    }

    /// Builds a table from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(CraegError::InvalidTable(format!(
                    "row {i} has length {} but row 0 has length {dim}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), dim, flat)
    }

    pub fn with_source(mut self, source: MatrixSource) -> Self {
        self.source = source;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> MatrixSource {
        self.source
    }

    /// Row-major payload.
    pub fn as_flat(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> Result<&[f32]> {
        self.check(index)?;
        Ok(&self.rows[index * self.dim..(index + 1) * self.dim])
    }

    pub fn norm(&self, index: usize) -> Result<f64> {
        self.check(index)?;
        Ok(self.norms[index])
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.vocab_size {
            Err(CraegError::OutOfBounds {
                index,
                vocab_size: self.vocab_size,
            })
        } else {
            Ok(())
        }
    }

    /// Unit-normalized copy of a row in double precision; all zeros for a zero-norm row.
    fn unit_row(&self, index: usize) -> Vec<f64> {
        let norm = self.norms[index];
        let row = &self.rows[index * self.dim..(index + 1) * self.dim];
        if norm < ZERO_NORM {
            vec![0.0; self.dim]
        } else {
            row.iter().map(|&v| f64::from(v) / norm).collect()
        }
    }
}

/// Cosine similarity between two vocabulary rows; 0 when either row has zero norm.
pub fn cosine_similarity(table: &EmbeddingTable, i: usize, j: usize) -> Result<f64> {
    let a = table.row(i)?;
    let b = table.row(j)?;
    let (na, nb) = (table.norms[i], table.norms[j]);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric matrix of absolute cosines over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsCosineMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AbsCosineMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }
}

/// Absolute cosine similarity for every pair of `ids`.
///
/// Only the `|ids| x |ids|` block is materialized; the diagonal is 1 for rows
/// with a direction and 0 for zero-norm rows.
pub fn pairwise_abs_cosine(table: &EmbeddingTable, ids: &[usize]) -> Result<AbsCosineMatrix> {
    check_ids(table, ids)?;
    let n = ids.len();
    let units: Vec<Vec<f64>> = ids.iter().map(|&id| table.unit_row(id)).collect();
    let mut data = vec![0.0; n * n];
    for a in 0..n {
        data[a * n + a] = if table.norms[ids[a]] < ZERO_NORM { 0.0 } else { 1.0 };
        for b in (a + 1)..n {
            let dot: f64 = units[a].iter().zip(&units[b]).map(|(x, y)| x * y).sum();
            let v = dot.abs().min(1.0);
            data[a * n + b] = v;
            data[b * n + a] = v;
        }
    }
    Ok(AbsCosineMatrix { n, data })
}

fn check_ids(table: &EmbeddingTable, ids: &[usize]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        table.check(id)?;
        if !seen.insert(id) {
            return Err(CraegError::DuplicateId(id));
        }
    }
    Ok(())
}

/// A next-token distribution over a set of vocabulary ids.
///
/// The full form carries probabilities summing to 1. The restricted form
/// (top-K or a correction set) carries raw, unrenormalized probabilities and
/// records their total in `mass`.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    token_ids: Vec<usize>,
    probs: Vec<f64>,
    mass: f64,
    restricted: bool,
}

impl NextTokenDistribution {
    /// Full distribution over explicit ids; probabilities must sum to 1 within 1e-6.
    pub fn new(token_ids: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let dist = Self::build(token_ids, probs, false)?;
        if (dist.mass - 1.0).abs() > FULL_MASS_TOL {
            return Err(CraegError::InvalidDistribution(format!(
                "probabilities sum to {} (expected 1 within {FULL_MASS_TOL})",
                dist.mass
            )));
        }
        Ok(dist)
    }

    /// Full distribution over ids `0..probs.len()`.
    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        Self::new((0..probs.len()).collect(), probs)
    }

    /// Restricted distribution; probabilities are kept as given and their total recorded.
    pub fn restricted(token_ids: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let dist = Self::build(token_ids, probs, true)?;
        if dist.mass > 1.0 + FULL_MASS_TOL {
            return Err(CraegError::InvalidDistribution(format!(
                "restricted mass {} exceeds 1",
                dist.mass
            )));
        }
        Ok(dist)
    }

    fn build(token_ids: Vec<usize>, probs: Vec<f64>, restricted: bool) -> Result<Self> {
        if token_ids.len() != probs.len() {
            return Err(CraegError::LengthMismatch {
                expected: token_ids.len(),
                actual: probs.len(),
            });
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0 + FULL_MASS_TOL)
        {
            return Err(CraegError::InvalidDistribution(format!(
                "probability {p} at position {i} is outside [0, 1]"
            )));
        }
        let mut seen = HashSet::with_capacity(token_ids.len());
        for &id in &token_ids {
            if !seen.insert(id) {
                return Err(CraegError::DuplicateId(id));
            }
        }
        let mass = probs.iter().sum();
        Ok(Self {
            token_ids,
            probs,
            mass,
            restricted,
        })
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.token_ids.iter().copied().zip(self.probs.iter().copied())
    }

    /// Probability of a vocabulary id, 0 when absent.
    pub fn prob_of(&self, token_id: usize) -> f64 {
        self.token_ids
            .iter()
            .position(|&id| id == token_id)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Checks every id against a vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.token_ids.iter().find(|&&id| id >= vocab_size) {
            Some(&index) => Err(CraegError::OutOfBounds { index, vocab_size }),
            None => Ok(()),
        }
    }

    /// Positions of the entries ordered by descending probability, ties by smaller id.
    pub fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_unstable_by(|&a, &b| self.rank_cmp(a, b));
        order
    }

    /// The first `k` positions of [`Self::descending_order`], without sorting the rest.
    pub fn top_positions(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        if k < order.len() {
            if k > 0 {
                order.select_nth_unstable_by(k - 1, |&a, &b| self.rank_cmp(a, b));
            }
            order.truncate(k);
        }
        order.sort_unstable_by(|&a, &b| self.rank_cmp(a, b));
        order
    }

    /// Positions with probability at least `threshold`, in descending order.
    pub fn positions_at_least(&self, threshold: f64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len())
            .filter(|&i| self.probs[i] >= threshold)
            .collect();
        order.sort_unstable_by(|&a, &b| self.rank_cmp(a, b));
        order
    }

    fn rank_cmp(&self, a: usize, b: usize) -> std::cmp::Ordering {
        self.probs[b]
            .total_cmp(&self.probs[a])
            .then(self.token_ids[a].cmp(&self.token_ids[b]))
    }

    /// Same ids, new probabilities, same form (full or restricted).
    pub(crate) fn with_probs(&self, probs: Vec<f64>) -> Self {
        let mass = probs.iter().sum();
        Self {
            token_ids: self.token_ids.clone(),
            probs,
            mass,
            restricted: self.restricted,
        }
    }

    /// Restricted view on a subset of positions, in the given order.
    pub(crate) fn select(&self, positions: &[usize]) -> Self {
        let token_ids = positions.iter().map(|&i| self.token_ids[i]).collect();
        let probs: Vec<f64> = positions.iter().map(|&i| self.probs[i]).collect();
        let mass = probs.iter().sum();
        Self {
            token_ids,
            probs,
            mass,
            restricted: true,
        }
    }
}

/// The K highest-probability tokens, in descending order, without renormalization.
///
/// Ties at the K-th rank keep the smaller vocabulary id.
pub fn top_k_restrict(dist: &NextTokenDistribution, k: usize) -> Result<NextTokenDistribution> {
    if k == 0 {
        return Err(CraegError::InvalidArgument("K must be at least 1".into()));
    }
    Ok(dist.select(&dist.top_positions(k)))
}

/// How a token's probability scales its crowding in the adjusted step score
/// and the correction factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `e^p - 1`
    #[default]
    Exponential,
    /// `p`
    Linear,
}

impl Weighting {
    #[inline]
    pub fn weight(self, p: f64) -> f64 {
        match self {
            Weighting::Exponential => p.exp_m1(),
            Weighting::Linear => p,
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = CraegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" | "nonlinear" => Ok(Weighting::Exponential),
            "linear" | "lin" => Ok(Weighting::Linear),
            other => Err(CraegError::InvalidConfig(format!("unknown weighting `{other}`"))),
        }
    }
}

/// Token-level crowding over the candidate set carried by `dist`.
///
/// The similarity block is built once, then each row is aggregated against
/// the probability vector with the self term excluded.
pub fn token_crowding_scores(
    table: &EmbeddingTable,
    dist: &NextTokenDistribution,
) -> Result<Vec<f64>> {
    let sims = pairwise_abs_cosine(table, dist.token_ids())?;
    Ok(crowding_from_similarities(&sims, dist.probs()))
}

pub(crate) fn crowding_from_similarities(sims: &AbsCosineMatrix, probs: &[f64]) -> Vec<f64> {
    (0..sims.len())
        .map(|a| {
            sims.row(a)
                .iter()
                .zip(probs)
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, (s, p))| s * p)
                .sum()
        })
        .collect()
}

/// Expected token crowding under the step distribution.
pub fn step_crowding(dist: &NextTokenDistribution, token_scores: &[f64]) -> Result<f64> {
    check_parallel(dist, token_scores)?;
    Ok(dist.probs().iter().zip(token_scores).map(|(p, s)| p * s).sum())
}

/// Step crowding with each token additionally scaled by its probability weight.
pub fn adjusted_step_crowding(
    dist: &NextTokenDistribution,
    token_scores: &[f64],
    weighting: Weighting,
) -> Result<f64> {
    check_parallel(dist, token_scores)?;
    Ok(dist
        .probs()
        .iter()
        .zip(token_scores)
        .map(|(&p, s)| p * weighting.weight(p) * s)
        .sum())
}

fn check_parallel(dist: &NextTokenDistribution, scores: &[f64]) -> Result<()> {
    if dist.len() != scores.len() {
        Err(CraegError::LengthMismatch {
            expected: dist.len(),
            actual: scores.len(),
        })
    } else {
        Ok(())
    }
}

/// Mean step crowding over a generation.
pub fn sequence_crowding(step_scores: &[f64]) -> Result<f64> {
    if step_scores.is_empty() {
        return Err(CraegError::InvalidArgument(
            "sequence crowding needs at least one step".into(),
        ));
    }
    Ok(step_scores.iter().sum::<f64>() / step_scores.len() as f64)
}

/// Crowding diagnostics for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdingReport {
    pub candidate_ids: Vec<usize>,
    pub token_scores: Vec<f64>,
    pub step_score: f64,
    pub adjusted_step_score: f64,
}

/// Token, step and adjusted step crowding over the candidates in `dist`.
pub fn crowding_report(
    table: &EmbeddingTable,
    dist: &NextTokenDistribution,
    weighting: Weighting,
) -> Result<CrowdingReport> {
    let token_scores = token_crowding_scores(table, dist)?;
    let step_score = step_crowding(dist, &token_scores)?;
    let adjusted_step_score = adjusted_step_crowding(dist, &token_scores, weighting)?;
    Ok(CrowdingReport {
        candidate_ids: dist.token_ids().to_vec(),
        token_scores,
        step_score,
        adjusted_step_score,
    })
}
