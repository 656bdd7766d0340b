//! Embedding-space crowding diagnostics and crowding-aware reweighting (CraEG)
//! for next-token sampling.
//!
//! * [`geometry`]: embedding tables and token, step and sequence crowding scores.
//! * [`sampler`]: the reweighting step, its strength factor, and the classical
//!   temperature / nucleus / sampling stages it sits between.
//! * [`analytics`]: entropy, tertiles, correlation, logistic regression, ECDFs
//!   and generation metrics (avg@k, pass@k, distinct-n, semantic diversity).
//! * [`trace_io`]: the binary embedding format, JSONL traces and the
//!   line-delimited reweight protocol.
//! * [`analysis`] and [`simulate`]: end-to-end trace analysis and a synthetic
//!   paired comparison.

pub mod analysis;
pub mod analytics;
pub mod error;
pub mod geometry;
pub mod sampler;
pub mod simulate;
pub mod trace_io;

pub use error::{CraegError, Result};
pub use geometry::{
    adjusted_step_crowding, cosine_similarity, crowding_report, pairwise_abs_cosine,
    sequence_crowding, step_crowding, token_crowding_scores, top_k_restrict, CrowdingReport,
    EmbeddingTable, MatrixSource, NextTokenDistribution, Weighting,
};
pub use sampler::{reweight, CraegConfig, LambdaMode, ReweightReport, SkipReason};
