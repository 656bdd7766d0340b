//! Crowding-aware reweighting, the classical sampling stages it composes
//! with, and the decode loop that chains them.

mod classic;
mod craeg;
pub mod oracle;
mod pipeline;

pub use classic::{sample_token, temperature_scale, top_p_filter};
pub use craeg::{
    compute_lambda, correction_factors, reweight, reweight_candidates, select_correction_set,
    CraegConfig, LambdaEstimate, LambdaMode, ReweightReport, SkipReason,
};
pub use oracle::exact_lambda;
pub use pipeline::{
    decode_pipeline, DecodeSettings, LogitSource, LogitStream, StepOutcome, Trajectory,
};
