//! Line-delimited JSON decoding traces.
//!
//! Each line holds one record. A sequence is a run of `step` records with
//! contiguous `step_index` values starting at 0, closed by a `sequence_end`
//! record whose `step_count` equals the number of steps.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack on the total of stored top-K probabilities.
pub const MASS_TOL: f64 = 1e-6;

/// Default number of candidates stored per step.
pub const DEFAULT_TRACE_TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub token_ids: Vec<usize>,
    /// Descending.
    pub probs: Vec<f64>,
    /// Total probability retained by the stored tokens.
    pub mass: f64,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEnd {
    pub sample_id: String,
    pub problem_id: String,
    pub correct: bool,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(StepRecord),
    SequenceEnd(SequenceEnd),
}

#[derive(Debug, Error)]
pub enum TraceErrorKind {
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("invalid step record: {0}")]
    InvalidStep(String),
    #[error("step index {found} out of sequence (expected {expected})")]
    NonContiguous { expected: usize, found: usize },
    #[error("sequence end declares {declared} steps but {seen} were read")]
    StepCountMismatch { declared: usize, seen: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A rejected line, with its 1-based line number.
#[derive(Debug, Error)]
#[error("line {line}: {kind}")]
pub struct TraceError {
    pub line: usize,
    pub kind: TraceErrorKind,
}

impl StepRecord {
    pub fn validate(&self) -> Result<(), TraceErrorKind> {
        let bad = |msg: String| Err(TraceErrorKind::InvalidStep(msg));
        if self.token_ids.len() != self.probs.len() {
            return bad(format!(
                "{} token ids but {} probabilities",
                self.token_ids.len(),
                self.probs.len()
            ));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("probability {p} outside [0, 1]"));
        }
        if self.probs.windows(2).any(|w| w[1] > w[0]) {
            return bad("probabilities are not in descending order".into());
        }
        let total: f64 = self.probs.iter().sum();
        if total > 1.0 + MASS_TOL {
            return bad(format!("probabilities sum to {total} > 1"));
        }
        if !(self.mass.is_finite() && (self.mass - total).abs() <= MASS_TOL) {
            return bad(format!(
                "retained mass {} disagrees with probability total {total}",
                self.mass
            ));
        }
        Ok(())
    }
}

/// Streaming reader; yields one item per non-blank line and never stops on a bad record.
pub struct TraceReader<R> {
    input: R,
    line: usize,
    expected_step: usize,
    buf: String,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Self {
        Self {
            input,
            line: 0,
            expected_step: 0,
            buf: String::new(),
        }
    }

    fn check(&mut self, record: &TraceRecord) -> Result<(), TraceErrorKind> {
        match record {
            TraceRecord::Step(step) => {
                step.validate()?;
                if step.step_index != self.expected_step {
                    return Err(TraceErrorKind::NonContiguous {
                        expected: self.expected_step,
                        found: step.step_index,
                    });
                }
                self.expected_step += 1;
                Ok(())
            }
            TraceRecord::SequenceEnd(end) => {
                let seen = std::mem::take(&mut self.expected_step);
                if end.step_count != seen {
                    return Err(TraceErrorKind::StepCountMismatch {
                        declared: end.step_count,
                        seen,
                    });
                }
                Ok(())
            }
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(TraceError {
                        line: self.line,
                        kind: e.into(),
                    }))
                }
            }
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<TraceRecord>(text)
                .map_err(|e| TraceErrorKind::Parse(e.to_string()))
                .and_then(|record| self.check(&record).map(|_| record));
            return Some(parsed.map_err(|kind| TraceError {
                line: self.line,
                kind,
            }));
        }
    }
}

pub fn read_trace_stream(path: impl AsRef<Path>) -> io::Result<TraceReader<BufReader<File>>> {
    Ok(TraceReader::new(BufReader::new(File::open(path)?)))
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// One complete sequence assembled from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub end: SequenceEnd,
    pub steps: Vec<StepRecord>,
}

/// Groups valid records into sequences; rejected lines are returned separately.
///
/// Steps of a sequence that is never closed are dropped.
pub fn collect_sequences<I>(records: I) -> (Vec<SequenceTrace>, Vec<TraceError>)
where
    I: IntoIterator<Item = Result<TraceRecord, TraceError>>,
{
    let mut sequences = Vec::new();
    let mut errors = Vec::new();
    let mut pending = Vec::new();
    for item in records {
        match item {
            Ok(TraceRecord::Step(step)) => pending.push(step),
            Ok(TraceRecord::SequenceEnd(end)) => sequences.push(SequenceTrace {
                end,
                steps: std::mem::take(&mut pending),
            }),
            Err(e) => {
                if matches!(e.kind, TraceErrorKind::StepCountMismatch { .. }) {
                    pending.clear();
                }
                errors.push(e);
            }
        }
    }
    (sequences, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(i: usize) -> String {
        format!(
            r#"{{"kind":"step","step_index":{i},"token_ids":[4,2],"probs":[0.6,0.3],"mass":0.9,"sampled":4}}"#
        )
    }

    fn read(text: &str) -> Vec<Result<TraceRecord, TraceError>> {
        TraceReader::new(text.as_bytes()).collect()
    }

    #[test]
    fn empty_input() {
        assert!(read("").is_empty());
        assert!(read("\n\n").is_empty());
    }

    #[test]
    fn two_steps_and_end() {
        let text = format!(
            "{}\n{}\n{}\n",
            step(0),
            step(1),
            r#"{"kind":"sequence_end","sample_id":"s","problem_id":"p","correct":true,"step_count":2}"#
        );
        let records = read(&text);
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(Result::is_ok));
        let (seqs, errs) = collect_sequences(records);
        assert!(errs.is_empty());
        assert_eq!(seqs[0].steps.len(), 2);
        assert!(seqs[0].end.correct);
    }

    #[test]
    fn step_count_enforced() {
        let text = format!(
            "{}\n{}\n",
            step(0),
            r#"{"kind":"sequence_end","sample_id":"s","problem_id":"p","correct":true,"step_count":3}"#
        );
        let records = read(&text);
        let err = records[1].as_ref().unwrap_err();
        assert_eq!(err.line, 2);
        assert!(matches!(err.kind, TraceErrorKind::StepCountMismatch { declared: 3, seen: 1 }));
    }

    #[test]
    fn unordered_probabilities_rejected() {
        let text = r#"{"kind":"step","step_index":0,"token_ids":[1,2],"probs":[0.2,0.5],"mass":0.7,"sampled":1}"#;
        let records = read(text);
        assert!(matches!(
            records[0].as_ref().unwrap_err().kind,
            TraceErrorKind::InvalidStep(_)
        ));
    }

    #[test]
    fn malformed_line_does_not_stop_stream() {
        let text = format!("{}\nnot json\n{}\n", step(0), step(1));
        let records = read(&text);
        assert_eq!(records.len(), 3);
        assert!(records[0].is_ok());
        assert_eq!(records[1].as_ref().unwrap_err().line, 2);
        assert!(records[2].is_ok());
    }

    #[test]
    fn gap_in_step_indices() {
        let text = format!("{}\n{}\n", step(0), step(2));
        let records = read(&text);
        assert!(matches!(
            records[1].as_ref().unwrap_err().kind,
            TraceErrorKind::NonContiguous { expected: 1, found: 2 }
        ));
    }

    #[test]
    fn writer_output_reads_back() {
        let mut w = TraceWriter::new(Vec::new());
        let rec = TraceRecord::Step(StepRecord {
            step_index: 0,
            token_ids: vec![3, 1],
            probs: vec![0.123456789012345, 0.1],
            mass: 0.223456789012345,
            sampled: 3,
        });
        w.write(&rec).unwrap();
        let bytes = w.into_inner();
        let back = read(std::str::from_utf8(&bytes).unwrap());
        assert_eq!(back[0].as_ref().unwrap(), &rec);
    }
}
