//! Crowding analysis of recorded decoding traces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    correlation_p_value, ecdf, expected_prob_by_crowding, logistic_fit, point_biserial,
    shannon_entropy, standardize, tertile_accuracy, EcdfCurve, ProbabilityByCrowding,
    RegressionResult, SequenceStats, TertileRow,
};
use crate::error::Result;
use crate::geometry::{
    sequence_crowding, step_crowding, token_crowding_scores, top_k_restrict, EmbeddingTable,
    NextTokenDistribution,
};
use crate::trace_io::SequenceTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Candidates per step used for crowding.
    pub top_k: usize,
    /// Bins for the probability-by-crowding table.
    pub bins: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { top_k: 100, bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub sample_id: String,
    pub problem_id: String,
    pub step_index: usize,
    pub correct: bool,
    pub step_crowding: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// A statistic, or why it could not be computed on this data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Value(T),
    Unavailable(String),
}

impl<T> Outcome<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Unavailable(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Outcome::Value(v) => Some(v),
            Outcome::Unavailable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub sequences: Vec<SequenceStats>,
    pub steps: Vec<StepRow>,
    pub tertiles: Outcome<[TertileRow; 3]>,
    pub correlation: Outcome<Correlation>,
    /// Correctness on standardized sequence crowding and mean entropy, intercept first.
    pub regression: Outcome<RegressionResult>,
    pub ecdf_correct: Outcome<EcdfCurve>,
    pub ecdf_incorrect: Outcome<EcdfCurve>,
    /// Mean probability by token crowding over every step's candidates.
    pub prob_by_crowding: Outcome<ProbabilityByCrowding>,
}

struct ScoredSequence {
    stats: SequenceStats,
    steps: Vec<StepRow>,
    token_pairs: Vec<(f64, f64)>,
}

fn score_sequence(
    table: &EmbeddingTable,
    trace: &SequenceTrace,
    options: &AnalyzeOptions,
) -> Result<ScoredSequence> {
    let end = &trace.end;
    let mut step_scores = Vec::with_capacity(trace.steps.len());
    let mut entropies = Vec::with_capacity(trace.steps.len());
    let mut rows = Vec::with_capacity(trace.steps.len());
    let mut token_pairs = Vec::new();
    for step in &trace.steps {
        let dist = NextTokenDistribution::restricted(step.token_ids.clone(), step.probs.clone())?;
        let top = top_k_restrict(&dist, options.top_k)?;
        let scores = token_crowding_scores(table, &top)?;
        let crowding = step_crowding(&top, &scores)?;
        let entropy = shannon_entropy(&dist);
        token_pairs.extend(scores.iter().copied().zip(top.probs().iter().copied()));
        step_scores.push(crowding);
        entropies.push(entropy);
        rows.push(StepRow {
            sample_id: end.sample_id.clone(),
            problem_id: end.problem_id.clone(),
            step_index: step.step_index,
            correct: end.correct,
            step_crowding: crowding,
            entropy,
        });
    }
    let seq_crowding = sequence_crowding(&step_scores)?;
    let mean_entropy = entropies.iter().sum::<f64>() / entropies.len() as f64;
    Ok(ScoredSequence {
        stats: SequenceStats {
            sample_id: end.sample_id.clone(),
            problem_id: end.problem_id.clone(),
            seq_crowding,
            mean_entropy,
            steps: trace.steps.len(),
            correct: end.correct,
        },
        steps: rows,
        token_pairs,
    })
}

/// Scores every sequence, then runs the sequence- and step-level analyses.
///
/// Sequences are scored in parallel and kept in input order.
pub fn analyze_traces(
    table: &EmbeddingTable,
    traces: &[SequenceTrace],
    options: &AnalyzeOptions,
) -> Result<TraceAnalysis> {
    let scored: Vec<ScoredSequence> = traces
        .par_iter()
        .map(|t| score_sequence(table, t, options))
        .collect::<Result<_>>()?;

    let sequences: Vec<SequenceStats> = scored.iter().map(|s| s.stats.clone()).collect();
    let steps: Vec<StepRow> = scored.iter().flat_map(|s| s.steps.iter().cloned()).collect();
    let token_pairs: Vec<(f64, f64)> = scored
        .iter()
        .flat_map(|s| s.token_pairs.iter().copied())
        .collect();

    let crowd: Vec<f64> = sequences.iter().map(|s| s.seq_crowding).collect();
    let entropy: Vec<f64> = sequences.iter().map(|s| s.mean_entropy).collect();
    let labels: Vec<bool> = sequences.iter().map(|s| s.correct).collect();

    let correlation = Outcome::from_result(point_biserial(&crowd, &labels).and_then(|r| {
        Ok(Correlation {
            r,
            p_value: correlation_p_value(r, crowd.len())?,
            n: crowd.len(),
        })
    }));
    let regression = Outcome::from_result((|| {
        let zc = standardize(&crowd)?;
        let ze = standardize(&entropy)?;
        let design: Vec<Vec<f64>> = zc.iter().zip(&ze).map(|(&c, &e)| vec![1.0, c, e]).collect();
        logistic_fit(&design, &labels)
    })());

    let step_values = |correct: bool| -> Vec<f64> {
        steps
            .iter()
            .filter(|s| s.correct == correct)
            .map(|s| s.step_crowding)
            .collect()
    };

    Ok(TraceAnalysis {
        tertiles: Outcome::from_result(tertile_accuracy(&sequences)),
        correlation,
        regression,
        ecdf_correct: Outcome::from_result(ecdf(&step_values(true))),
        ecdf_incorrect: Outcome::from_result(ecdf(&step_values(false))),
        prob_by_crowding: Outcome::from_result(expected_prob_by_crowding(
            &token_pairs,
            options.bins,
        )),
        sequences,
        steps,
    })
}
