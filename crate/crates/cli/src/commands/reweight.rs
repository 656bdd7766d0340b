use std::io::Read;

use craeg::geometry::{crowding_report, top_k_restrict, CrowdingReport, FULL_MASS_TOL};
use craeg::sampler::{reweight, reweight_candidates, temperature_scale, top_p_filter, SkipReason};
use craeg::{EmbeddingTable, NextTokenDistribution, Weighting};
use serde::{Deserialize, Serialize};

use super::load_table;
use crate::config::{ReweightArgs, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{print_summary, Artifacts};

/// One distribution, given either as probabilities or as raw logits over the vocabulary.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReweightInput {
    token_ids: Option<Vec<usize>>,
    probs: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct CrowdingSummary {
    step: f64,
    adjusted_step: f64,
}

impl From<&CrowdingReport> for CrowdingSummary {
    fn from(r: &CrowdingReport) -> Self {
        Self {
            step: r.step_score,
            adjusted_step: r.adjusted_step_score,
        }
    }
}

#[derive(Debug, Serialize)]
struct ReweightOutput {
    token_ids: Vec<usize>,
    probs_in: Vec<f64>,
    probs_out: Vec<f64>,
    /// After nucleus filtering, when `--top-p` is below 1.
    probs_truncated: Option<Vec<f64>>,
    lambda: f64,
    skipped: Option<SkipReason>,
    correction_set: Vec<usize>,
    token_crowding: Vec<f64>,
    alphas: Vec<f64>,
    target_reduction: f64,
    achieved_reduction: f64,
    crowding_before: CrowdingSummary,
    crowding_after: CrowdingSummary,
}

fn read_input(args: &ReweightArgs) -> CliResult<ReweightInput> {
    let mut text = String::new();
    if args.input.as_os_str() == "-" {
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::io("<stdin>", e))?;
    } else {
        text = std::fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    }
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("reweight input: {e}")))
}

fn distribution(input: ReweightInput, run: &RunConfig) -> CliResult<NextTokenDistribution> {
    match (input.probs, input.logits) {
        (Some(probs), None) => Ok(match input.token_ids {
            None => NextTokenDistribution::dense(probs)?,
            Some(ids) => {
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() <= FULL_MASS_TOL {
                    NextTokenDistribution::new(ids, probs)?
                } else {
                    NextTokenDistribution::restricted(ids, probs)?
                }
            }
        }),
        (None, Some(logits)) => {
            if input.token_ids.is_some() {
                return Err(CliError::Input(
                    "logits cover the whole vocabulary; drop token_ids".into(),
                ));
            }
            Ok(temperature_scale(&logits, run.temperature)?)
        }
        _ => Err(CliError::Input(
            "give exactly one of `probs` or `logits`".into(),
        )),
    }
}

fn crowding(
    table: &EmbeddingTable,
    dist: &NextTokenDistribution,
    k: usize,
    weighting: Weighting,
) -> CliResult<CrowdingReport> {
    Ok(crowding_report(table, &top_k_restrict(dist, k)?, weighting)?)
}

pub fn run(args: &ReweightArgs, run: &RunConfig) -> CliResult<()> {
    let table = load_table(&args.table)?;
    let dist = distribution(read_input(args)?, run)?;
    let (out, report) = if dist.is_restricted() {
        log::info!(
            "partial payload with mass {:.6}; tokens below epsilon are left as given",
            dist.mass()
        );
        reweight_candidates(&dist, &table, &run.craeg)?
    } else {
        reweight(&dist, &table, &run.craeg)?
    };
    match report.skipped {
        Some(reason) => log::info!("step passed through unchanged ({reason})"),
        None => log::info!(
            "lambda {:.6}, reduction {:.6} against target {:.6}",
            report.lambda,
            report.achieved_reduction,
            report.target_reduction
        ),
    }
    let truncated = if run.top_p < 1.0 {
        Some(top_p_filter(&out, run.top_p)?.probs().to_vec())
    } else {
        None
    };
    let weighting = run.craeg.weighting;
    let output = ReweightOutput {
        token_ids: dist.token_ids().to_vec(),
        probs_in: dist.probs().to_vec(),
        probs_out: out.probs().to_vec(),
        probs_truncated: truncated,
        lambda: report.lambda,
        skipped: report.skipped,
        correction_set: report.correction_set.clone(),
        token_crowding: report.token_crowding.clone(),
        alphas: report.alphas.clone(),
        target_reduction: report.target_reduction,
        achieved_reduction: report.achieved_reduction,
        crowding_before: (&crowding(&table, &dist, run.top_k, weighting)?).into(),
        crowding_after: (&crowding(&table, &out, run.top_k, weighting)?).into(),
    };
    let mut artifacts = Artifacts::new(run.out_dir.clone())?;
    artifacts.json("reweight.json", &output)?;
    artifacts.finish();
    print_summary(&output)
}
