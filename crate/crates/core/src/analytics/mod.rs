//! Sequence-level statistics, regression and generation-quality metrics.

mod logistic;
mod metrics;
mod stats;

pub use logistic::{logistic_fit, FitStatus, RegressionResult, GRADIENT_TOL, MAX_ITERATIONS};
pub use metrics::{
    avg_at_k, distinct_n, mean_pass_at_k, pass_at_k, semantic_diversity, SemanticDiversity,
    NEAR_DUPLICATE_COSINE,
};
pub use stats::{
    correlation_p_value, ecdf, expected_prob_by_crowding, point_biserial, shannon_entropy,
    standardize, tertile_accuracy, CrowdingBin, EcdfCurve, ProbabilityBin, ProbabilityByCrowding,
    SequenceStats, TertileRow,
};
