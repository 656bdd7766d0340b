//! Input generators shared by the benchmarks.

use craeg::{EmbeddingTable, NextTokenDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..vocab * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingTable::from_flat(vocab, dim, rows).unwrap()
}

/// Softmax of Gumbel-ish logits: a heavy head and a long tail, like a real model.
pub fn peaked_distribution(vocab: usize, seed: u64) -> NextTokenDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..vocab)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            -4.0 * (-u.ln()).ln()
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    NextTokenDistribution::dense(exp.iter().map(|e| e / z).collect()).unwrap()
}
