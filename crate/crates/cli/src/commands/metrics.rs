use std::collections::BTreeMap;
use std::io::BufRead;

use craeg::analytics::{avg_at_k, distinct_n, pass_at_k, semantic_diversity};
use serde::{Deserialize, Serialize};

use crate::config::{MetricsArgs, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{print_summary, Artifacts};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Deserialize)]
#[serde(untagged)]
enum Token {
    Id(u64),
    Text(String),
}

/// One scored generation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultRecord {
    problem_id: String,
    #[serde(default)]
    #[allow(dead_code)]
    sample_id: Option<String>,
    correct: bool,
    #[serde(default)]
    tokens: Option<Vec<Token>>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
struct Problem {
    correct: Vec<bool>,
    tokens: Vec<Vec<Token>>,
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    problem_id: &'a str,
    metric: String,
    value: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    problems: usize,
    samples: usize,
    avg_at_k: f64,
    pass_at_k: BTreeMap<String, f64>,
    /// Mean over problems of the per-problem distinct-n.
    distinct_n: Option<f64>,
    /// Mean over problems of the per-problem semantic diversity.
    semantic_diversity: Option<f64>,
    near_duplicate_fraction: Option<f64>,
}

fn read_results(args: &MetricsArgs) -> CliResult<BTreeMap<String, Problem>> {
    let file = std::fs::File::open(&args.results).map_err(|e| CliError::io(&args.results, e))?;
    let mut problems: BTreeMap<String, Problem> = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&args.results, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ResultRecord = serde_json::from_str(&line).map_err(|e| {
            CliError::Input(format!("{} line {}: {e}", args.results.display(), i + 1))
        })?;
        let p = problems.entry(record.problem_id).or_default();
        p.correct.push(record.correct);
        p.tokens.extend(record.tokens);
        p.embeddings.extend(record.embedding);
    }
    if problems.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no records",
            args.results.display()
        )));
    }
    Ok(problems)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn run(args: &MetricsArgs, run: &RunConfig) -> CliResult<()> {
    let problems = read_results(args)?;
    let mut rows = Vec::new();

    let matrix: Vec<Vec<bool>> = problems.values().map(|p| p.correct.clone()).collect();
    let avg = avg_at_k(&matrix)?;

    let mut pass = BTreeMap::new();
    for &k in &args.ks {
        let mut total = 0.0;
        for (id, p) in &problems {
            let n = p.correct.len();
            let c = p.correct.iter().filter(|&&x| x).count();
            let v = pass_at_k(n, c, k).map_err(|e| CliError::Input(format!("problem {id}: {e}")))?;
            rows.push(MetricRow {
                problem_id: id,
                metric: format!("pass@{k}"),
                value: 100.0 * v,
            });
            total += v;
        }
        pass.insert(format!("pass@{k}"), 100.0 * total / problems.len() as f64);
    }

    let mut distinct = Vec::new();
    let mut semdiv = Vec::new();
    let mut near_dup = Vec::new();
    for (id, p) in &problems {
        if !p.tokens.is_empty() {
            match distinct_n(&p.tokens, args.ngram) {
                Ok(v) => {
                    distinct.push(v);
                    rows.push(MetricRow {
                        problem_id: id,
                        metric: format!("distinct-{}", args.ngram),
                        value: v,
                    });
                }
                Err(e) => log::warn!("problem {id}: distinct-{} skipped: {e}", args.ngram),
            }
        }
        if p.embeddings.len() >= 2 {
            let s = semantic_diversity(&p.embeddings)
                .map_err(|e| CliError::Input(format!("problem {id}: {e}")))?;
            semdiv.push(s.score);
            near_dup.push(s.near_duplicate_fraction);
            rows.push(MetricRow {
                problem_id: id,
                metric: "semantic_diversity".into(),
                value: s.score,
            });
        }
    }

    let summary = Summary {
        problems: problems.len(),
        samples: matrix.iter().map(Vec::len).sum(),
        avg_at_k: avg,
        pass_at_k: pass,
        distinct_n: mean(&distinct),
        semantic_diversity: mean(&semdiv),
        near_duplicate_fraction: mean(&near_dup),
    };
    log::info!(
        "{} problems, {} samples, avg@k {:.2}",
        summary.problems,
        summary.samples,
        summary.avg_at_k
    );

    let mut out = Artifacts::new(run.out_dir.clone())?;
    out.csv("per_problem.csv", &rows)?;
    out.json("metrics.json", &summary)?;
    out.finish();
    print_summary(&summary)
}
