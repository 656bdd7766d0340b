//! Line-delimited reweighting protocol.
//!
//! Request:  `{"id": <any>, "token_ids": [..], "probs": [..]}`
//! Response: `{"id": <same>, "probs": [..], "lambda": <f64>, "skipped": <bool>}`
//! Failure:  `{"id": <same or null>, "error": "<message>"}`
//!
//! Responses are written in request order, one per non-blank input line,
//! with `probs` parallel to the request's `token_ids`. A payload may carry
//! only part of the vocabulary; tokens below the threshold are never
//! modified, so forwarding every token at or above it is enough.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::{EmbeddingTable, NextTokenDistribution};
use crate::sampler::{reweight_candidates, CraegConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightRequest {
    pub id: Value,
    pub token_ids: Vec<usize>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReweightResponse {
    Ok {
        id: Value,
        probs: Vec<f64>,
        lambda: f64,
        skipped: bool,
    },
    Error {
        id: Value,
        error: String,
    },
}

impl ReweightResponse {
    pub fn id(&self) -> &Value {
        match self {
            ReweightResponse::Ok { id, .. } | ReweightResponse::Error { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub requests: usize,
    pub errors: usize,
}

/// Answers one request line.
pub fn handle_request(line: &str, table: &EmbeddingTable, config: &CraegConfig) -> ReweightResponse {
    let request: ReweightRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").cloned())
                .unwrap_or(Value::Null);
            return ReweightResponse::Error {
                id,
                error: format!("malformed request: {e}"),
            };
        }
    };
    let result = NextTokenDistribution::restricted(request.token_ids, request.probs)
        .and_then(|dist| reweight_candidates(&dist, table, config));
    match result {
        Ok((dist, report)) => ReweightResponse::Ok {
            id: request.id,
            probs: dist.probs().to_vec(),
            lambda: report.lambda,
            skipped: report.is_skipped(),
        },
        Err(e) => ReweightResponse::Error {
            id: request.id,
            error: e.to_string(),
        },
    }
}

/// Serves requests until end of input, flushing after every response.
pub fn serve_stream<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    table: &EmbeddingTable,
    config: &CraegConfig,
) -> io::Result<ServeSummary> {
    let mut summary = ServeSummary::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_request(&line, table, config);
        summary.requests += 1;
        if let ReweightResponse::Error { error, .. } = &response {
            log::warn!("request {} failed: {error}", summary.requests);
            summary.errors += 1;
        }
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(summary)
}
