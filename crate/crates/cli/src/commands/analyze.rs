use craeg::analysis::{analyze_traces, AnalyzeOptions, Outcome};
use craeg::analytics::EcdfCurve;
use craeg::trace_io::{collect_sequences, read_trace_stream};
use serde::Serialize;

use super::load_table;
use crate::config::{AnalyzeArgs, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{print_summary, Artifacts};

#[derive(Debug, Serialize)]
struct CoefficientRow<'a> {
    term: &'a str,
    coefficient: f64,
    standard_error: f64,
    z: f64,
    p_value: f64,
    odds_ratio: f64,
}

#[derive(Debug, Serialize)]
struct EcdfRow {
    value: f64,
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    sequences: usize,
    steps: usize,
    rejected_lines: usize,
    mean_crowding_correct: Option<f64>,
    mean_crowding_incorrect: Option<f64>,
    tertiles: &'a Outcome<[craeg::analytics::TertileRow; 3]>,
    correlation: &'a Outcome<craeg::analysis::Correlation>,
    regression: &'a Outcome<craeg::analytics::RegressionResult>,
}

fn ecdf_rows(curve: &Outcome<EcdfCurve>) -> Vec<EcdfRow> {
    curve.value().map_or_else(Vec::new, |c| {
        c.sorted_values
            .iter()
            .zip(&c.cumulative_fractions)
            .map(|(&value, &fraction)| EcdfRow { value, fraction })
            .collect()
    })
}

fn report_unavailable<T>(name: &str, outcome: &Outcome<T>) {
    if let Outcome::Unavailable(why) = outcome {
        log::warn!("{name} unavailable: {why}");
    }
}

pub fn run(args: &AnalyzeArgs, run: &RunConfig) -> CliResult<()> {
    let table = load_table(&args.table)?;
    let reader = read_trace_stream(&args.traces).map_err(|e| CliError::io(&args.traces, e))?;
    let (sequences, errors) = collect_sequences(reader);
    for e in &errors {
        log::warn!("{}: {e}", args.traces.display());
    }
    if sequences.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no complete sequence ({} rejected lines)",
            args.traces.display(),
            errors.len()
        )));
    }
    log::info!(
        "{} sequences, {} rejected lines; crowding over top {} candidates",
        sequences.len(),
        errors.len(),
        run.top_k
    );

    let options = AnalyzeOptions {
        top_k: run.top_k,
        bins: args.bins,
    };
    let analysis = analyze_traces(&table, &sequences, &options)?;
    report_unavailable("tertile accuracy", &analysis.tertiles);
    report_unavailable("correlation", &analysis.correlation);
    report_unavailable("regression", &analysis.regression);
    if let Some(fit) = analysis.regression.value() {
        if !fit.converged {
            log::warn!("regression did not converge ({:?})", fit.status);
        }
    }

    let mean_of = |correct: bool| {
        let v: Vec<f64> = analysis
            .sequences
            .iter()
            .filter(|s| s.correct == correct)
            .map(|s| s.seq_crowding)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };

    let mut out = Artifacts::new(run.out_dir.clone())?;
    out.csv("sequences.csv", &analysis.sequences)?;
    out.csv("steps.csv", &analysis.steps)?;
    if let Some(rows) = analysis.tertiles.value() {
        out.csv("tertiles.csv", rows)?;
    }
    if let Some(fit) = analysis.regression.value() {
        let terms = ["intercept", "crowding_z", "entropy_z"];
        out.csv(
            "regression.csv",
            (0..fit.coefficients.len()).map(|j| CoefficientRow {
                term: terms[j],
                coefficient: fit.coefficients[j],
                standard_error: fit.standard_errors[j],
                z: fit.z_values[j],
                p_value: fit.p_values[j],
                odds_ratio: fit.odds_ratios[j],
            }),
        )?;
    }
    out.csv("ecdf_correct.csv", ecdf_rows(&analysis.ecdf_correct))?;
    out.csv("ecdf_incorrect.csv", ecdf_rows(&analysis.ecdf_incorrect))?;
    if let Some(p) = analysis.prob_by_crowding.value() {
        out.csv("prob_by_crowding.csv", &p.bins)?;
    }
    out.json("analysis.json", &analysis)?;
    out.finish();

    print_summary(&Summary {
        sequences: analysis.sequences.len(),
        steps: analysis.steps.len(),
        rejected_lines: errors.len(),
        mean_crowding_correct: mean_of(true),
        mean_crowding_incorrect: mean_of(false),
        tertiles: &analysis.tertiles,
        correlation: &analysis.correlation,
        regression: &analysis.regression,
    })
}
