use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classic::{sample_token, temperature_scale, top_p_filter};
use super::craeg::{reweight, CraegConfig, ReweightReport};
use crate::analytics::shannon_entropy;
use crate::error::{CraegError, Result};
use crate::geometry::{
    crowding_report, top_k_restrict, CrowdingReport, EmbeddingTable, NextTokenDistribution,
};

/// Produces next-token logits given the tokens decoded so far.
pub trait LogitSource {
    fn vocab_size(&self) -> usize;

    fn logits(&mut self, step: usize, history: &[usize]) -> Vec<f64>;
}

/// A fixed list of logit vectors, replayed regardless of history.
#[derive(Debug, Clone)]
pub struct LogitStream {
    steps: Vec<Vec<f64>>,
}

impl LogitStream {
    pub fn new(steps: Vec<Vec<f64>>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl LogitSource for LogitStream {
    fn vocab_size(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    fn logits(&mut self, step: usize, _history: &[usize]) -> Vec<f64> {
        self.steps[step].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub steps: usize,
    pub seed: u64,
    /// Candidates kept for the per-step crowding diagnostics.
    pub report_top_k: usize,
    /// `None` runs the baseline pipeline.
    pub craeg: Option<CraegConfig>,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            steps: 64,
            seed: 0,
            report_top_k: 100,
            craeg: None,
        }
    }
}

/// Everything recorded for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub token: usize,
    /// Present when the reweighting stage ran.
    pub reweight: Option<ReweightReport>,
    /// Crowding of the distribution actually sampled from, over its top-K.
    pub crowding: CrowdingReport,
    /// Entropy (nats) of the distribution actually sampled from.
    pub entropy: f64,
    /// Top-K of the sampled distribution.
    pub top_k: NextTokenDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<usize>,
    pub steps: Vec<StepOutcome>,
}

impl Trajectory {
    pub fn step_crowding(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.crowding.step_score).collect()
    }

    pub fn mean_step_crowding(&self) -> f64 {
        mean(self.steps.iter().map(|s| s.crowding.step_score))
    }

    pub fn mean_entropy(&self) -> f64 {
        mean(self.steps.iter().map(|s| s.entropy))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Runs temperature scaling, crowding-aware reweighting, nucleus filtering
/// and sampling, in that order, for `settings.steps` steps.
///
/// Sampling is the only consumer of the seeded generator, so with `tau = 0`
/// the trajectory matches the baseline pipeline token for token.
pub fn decode_pipeline<S: LogitSource + ?Sized>(
    source: &mut S,
    table: &EmbeddingTable,
    settings: &DecodeSettings,
) -> Result<Trajectory> {
    if source.vocab_size() > table.vocab_size() {
        return Err(CraegError::InvalidArgument(format!(
            "logit source covers {} tokens but the table has {}",
            source.vocab_size(),
            table.vocab_size()
        )));
    }
    if let Some(config) = &settings.craeg {
        config.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut tokens = Vec::with_capacity(settings.steps);
    let mut steps = Vec::with_capacity(settings.steps);
    let weighting = settings.craeg.as_ref().map(|c| c.weighting).unwrap_or_default();

    for step in 0..settings.steps {
        let logits = source.logits(step, &tokens);
        let scaled = temperature_scale(&logits, settings.temperature)?;
        let (corrected, report) = match &settings.craeg {
            Some(config) => {
                let (dist, report) = reweight(&scaled, table, config)?;
                (dist, Some(report))
            }
            None => (scaled, None),
        };
        let filtered = top_p_filter(&corrected, settings.top_p)?;
        let token = sample_token(&filtered, &mut rng);

        let top_k = top_k_restrict(&filtered, settings.report_top_k.max(1))?;
        let crowding = crowding_report(table, &top_k, weighting)?;
        let entropy = shannon_entropy(&filtered);
        tokens.push(token);
        steps.push(StepOutcome {
            token,
            reweight: report,
            crowding,
            entropy,
            top_k,
        });
    }
    Ok(Trajectory { tokens, steps })
}
