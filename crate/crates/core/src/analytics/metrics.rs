use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{CraegError, Result};

/// Cosine above which two samples count as near duplicates.
pub const NEAR_DUPLICATE_COSINE: f64 = 0.999;

/// Mean correctness over every sample of every problem, scaled by 100.
pub fn avg_at_k(per_sample_correct: &[Vec<bool>]) -> Result<f64> {
    let total: usize = per_sample_correct.iter().map(Vec::len).sum();
    if per_sample_correct.is_empty() || per_sample_correct.iter().any(Vec::is_empty) {
        return Err(CraegError::InvalidArgument(
            "avg@k needs at least one sample per problem".into(),
        ));
    }
    let correct = per_sample_correct.iter().flatten().filter(|&&c| c).count();
    Ok(100.0 * correct as f64 / total as f64)
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Unbiased pass@k estimate `1 - C(n - c, k) / C(n, k)` for one problem.
///
/// Uses exact integer binomials while they fit in 128 bits and the
/// telescoped product `1 - prod_{i = n-c+1}^{n} (1 - k / i)` beyond that.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(CraegError::InvalidArgument(format!(
            "pass@k needs 1 <= k <= n (k = {k}, n = {n})"
        )));
    }
    if c > n {
        return Err(CraegError::InvalidArgument(format!(
            "correct count {c} exceeds sample count {n}"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let (n64, c64, k64) = (n as u64, c as u64, k as u64);
    if let (Some(fail), Some(all)) = (binomial(n64 - c64, k64), binomial(n64, k64)) {
        return Ok(1.0 - fail as f64 / all as f64);
    }
    let miss: f64 = ((n - c + 1)..=n)
        .map(|i| 1.0 - k as f64 / i as f64)
        .product();
    Ok(1.0 - miss)
}

/// Mean pass@k over problems given `(n, c)` per problem, scaled by 100.
pub fn mean_pass_at_k(counts: &[(usize, usize)], k: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(CraegError::InvalidArgument("no problems".into()));
    }
    let mut total = 0.0;
    for &(n, c) in counts {
        total += pass_at_k(n, c, k)?;
    }
    Ok(100.0 * total / counts.len() as f64)
}

/// Unique n-grams over total n-grams across the pooled sequences, scaled by 100.
pub fn distinct_n<T: Hash + Eq>(sequences: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(CraegError::InvalidArgument("n must be at least 1".into()));
    }
    let mut unique: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for seq in sequences.iter().filter(|s| s.len() >= n) {
        for gram in seq.windows(n) {
            unique.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Err(CraegError::InvalidArgument(format!(
            "no sequence has at least {n} tokens"
        )));
    }
    Ok(100.0 * unique.len() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticDiversity {
    /// `100 * (1 - mean pairwise cosine)`
    pub score: f64,
    /// Fraction of pairs with cosine above 0.999.
    pub near_duplicate_fraction: f64,
}

/// Semantic diversity over all unordered pairs of sample embeddings.
pub fn semantic_diversity<V: AsRef<[f64]>>(embeddings: &[V]) -> Result<SemanticDiversity> {
    if embeddings.len() < 2 {
        return Err(CraegError::InvalidArgument(
            "semantic diversity needs at least two samples".into(),
        ));
    }
    let dim = embeddings[0].as_ref().len();
    let mut units = Vec::with_capacity(embeddings.len());
    for (i, e) in embeddings.iter().enumerate() {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(CraegError::LengthMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(CraegError::InvalidArgument(format!(
                "embedding {i} has zero or non-finite norm"
            )));
        }
        units.push(e.iter().map(|v| v / norm).collect::<Vec<f64>>());
    }
    let mut sum = 0.0;
    let mut dupes = 0usize;
    let mut pairs = 0usize;
    for a in 0..units.len() {
        for b in (a + 1)..units.len() {
            let cos: f64 = units[a].iter().zip(&units[b]).map(|(x, y)| x * y).sum();
            let cos = cos.clamp(-1.0, 1.0);
            sum += cos;
            dupes += usize::from(cos > NEAR_DUPLICATE_COSINE);
            pairs += 1;
        }
    }
    Ok(SemanticDiversity {
        score: 100.0 * (1.0 - sum / pairs as f64),
        near_duplicate_fraction: dupes as f64 / pairs as f64,
    })
}
