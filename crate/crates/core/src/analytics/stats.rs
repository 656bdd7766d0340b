use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CraegError, Result};
use crate::geometry::NextTokenDistribution;

/// Per-generation aggregates used by every sequence-level analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub sample_id: String,
    pub problem_id: String,
    pub seq_crowding: f64,
    /// Mean per-step entropy, in nats.
    pub mean_entropy: f64,
    pub steps: usize,
    pub correct: bool,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(dist: &NextTokenDistribution) -> f64 {
    -dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Linear-interpolation quantile of already sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrowdingBin {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertileRow {
    pub bin: CrowdingBin,
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub count: usize,
    /// Fraction correct; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Accuracy by sequence-crowding tertile.
///
/// Edges are the 1/3 and 2/3 interpolated quantiles; a value equal to an edge
/// goes to the lower bin.
pub fn tertile_accuracy(stats: &[SequenceStats]) -> Result<[TertileRow; 3]> {
    if stats.len() < 3 {
        return Err(CraegError::InvalidArgument(format!(
            "tertiles need at least 3 sequences, got {}",
            stats.len()
        )));
    }
    let mut sorted: Vec<f64> = stats.iter().map(|s| s.seq_crowding).collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 1.0 / 3.0);
    let q2 = quantile_sorted(&sorted, 2.0 / 3.0);

    let mut counts = [0usize; 3];
    let mut correct = [0usize; 3];
    for s in stats {
        let bin = if s.seq_crowding <= q1 {
            0
        } else if s.seq_crowding <= q2 {
            1
        } else {
            2
        };
        counts[bin] += 1;
        correct[bin] += usize::from(s.correct);
    }
    let row = |i: usize, bin, lower_edge, upper_edge| TertileRow {
        bin,
        lower_edge,
        upper_edge,
        count: counts[i],
        accuracy: (counts[i] > 0).then(|| correct[i] as f64 / counts[i] as f64),
    };
    Ok([
        row(0, CrowdingBin::Low, sorted[0], q1),
        row(1, CrowdingBin::Mid, q1, q2),
        row(2, CrowdingBin::High, q2, sorted[sorted.len() - 1]),
    ])
}

/// Point-biserial correlation between a continuous variable and a binary outcome.
///
/// Computed from the group means, `r = (m1 - m0) / s * sqrt(n1 n0) / n` with
/// `s` the population standard deviation of `x`.
pub fn point_biserial(x: &[f64], y: &[bool]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CraegError::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let n = x.len() as f64;
    let (mut sum1, mut sum0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (&v, &label) in x.iter().zip(y) {
        if label {
            sum1 += v;
            n1 += 1;
        } else {
            sum0 += v;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(CraegError::Undefined(
            "point-biserial correlation needs both outcome classes".into(),
        ));
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(CraegError::Undefined(
            "point-biserial correlation of a constant variable".into(),
        ));
    }
    let (m1, m0) = (sum1 / n1 as f64, sum0 / n0 as f64);
    let r = (m1 - m0) / var.sqrt() * ((n1 as f64) * (n0 as f64)).sqrt() / n;
    Ok(r.clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation coefficient under the t test with `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(CraegError::Undefined(format!(
            "correlation test needs at least 3 observations, got {n}"
        )));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| CraegError::Undefined(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Zero mean, unit sample (n - 1) standard deviation.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(CraegError::Undefined(
            "standardization needs at least two values".into(),
        ));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(CraegError::Undefined("cannot standardize a constant vector".into()));
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

/// Empirical CDF at the sorted distinct observed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfCurve {
    pub sorted_values: Vec<f64>,
    pub cumulative_fractions: Vec<f64>,
}

impl EcdfCurve {
    /// `F(v)`: fraction of observations at or below `v`.
    pub fn eval(&self, v: f64) -> f64 {
        let idx = self.sorted_values.partition_point(|&x| x <= v);
        if idx == 0 {
            0.0
        } else {
            self.cumulative_fractions[idx - 1]
        }
    }
}

pub fn ecdf(values: &[f64]) -> Result<EcdfCurve> {
    if values.is_empty() {
        return Err(CraegError::InvalidArgument("ECDF of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CraegError::InvalidArgument("ECDF input contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut sorted_values = Vec::new();
    let mut cumulative_fractions = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if sorted.get(i + 1) == Some(&v) {
            continue;
        }
        sorted_values.push(v);
        cumulative_fractions.push((i + 1) as f64 / n);
    }
    Ok(EcdfCurve {
        sorted_values,
        cumulative_fractions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityByCrowding {
    pub bins: Vec<ProbabilityBin>,
    pub mean_crowding: f64,
}

/// Mean probability per equal-width crowding bin over the observed range.
///
/// The last bin is closed on the right. With a zero-width range every pair
/// lands in the first bin.
pub fn expected_prob_by_crowding(
    pairs: &[(f64, f64)],
    n_bins: usize,
) -> Result<ProbabilityByCrowding> {
    if n_bins == 0 {
        return Err(CraegError::InvalidArgument("need at least one bin".into()));
    }
    if pairs.is_empty() {
        return Ok(ProbabilityByCrowding {
            bins: Vec::new(),
            mean_crowding: 0.0,
        });
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(c, p) in pairs {
        let idx = if width > 0.0 {
            (((c - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        sums[idx] += p;
        counts[idx] += 1;
    }
    let bins = (0..n_bins)
        .map(|i| ProbabilityBin {
            lower: lo + width * i as f64,
            upper: if i + 1 == n_bins { hi } else { lo + width * (i + 1) as f64 },
            count: counts[i],
            mean_prob: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
        })
        .collect();
    let mean_crowding = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    Ok(ProbabilityByCrowding {
        bins,
        mean_crowding,
    })
}
