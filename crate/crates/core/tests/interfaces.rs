//! Wire formats shared with external tooling: the binary embedding file,
//! JSONL traces and the line-delimited reweight protocol.

use std::io::Cursor;

use craeg::geometry::{EmbeddingTable, MatrixSource, NextTokenDistribution};
use craeg::sampler::{reweight, CraegConfig};
use craeg::trace_io::{
    collect_sequences, load_embedding_table, read_embedding_table, save_embedding_table,
    serve_stream, write_embedding_table, EmbeddingFileError, ReweightRequest, ReweightResponse,
    SequenceEnd, StepRecord, TraceReader, TraceRecord, TraceWriter, HEADER_LEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(rng: &mut ChaCha8Rng, v: usize, d: usize) -> EmbeddingTable {
    let rows = (0..v * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingTable::from_flat(v, d, rows).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v).map(|_| rng.random_range(0.0f64..1.0).powi(4)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

#[test]
fn embedding_file_round_trip_is_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let table = random_table(&mut rng, 257, 13).with_source(MatrixSource::OutputProjection);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.crwd");
    save_embedding_table(&table, &path).unwrap();
    let loaded = load_embedding_table(&path).unwrap();
    assert_eq!(loaded, table);
    assert_eq!(loaded.source(), MatrixSource::OutputProjection);

    let first = std::fs::read(&path).unwrap();
    assert_eq!(first.len(), HEADER_LEN + 257 * 13 * 4);
    let mut second = Vec::new();
    write_embedding_table(&loaded, &mut second).unwrap();
    assert_eq!(first, second);
}

#[test]
fn embedding_file_rejects_damage() {
    let table = EmbeddingTable::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
    let mut bytes = Vec::new();
    write_embedding_table(&table, &mut bytes).unwrap();

    let truncated = &bytes[..bytes.len() - 1];
    assert!(matches!(
        read_embedding_table(Cursor::new(truncated)),
        Err(EmbeddingFileError::Truncated { .. })
    ));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(
        read_embedding_table(Cursor::new(&trailing)),
        Err(EmbeddingFileError::TrailingData(1))
    ));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        read_embedding_table(Cursor::new(&magic)),
        Err(EmbeddingFileError::BadMagic(_))
    ));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        read_embedding_table(Cursor::new(&version)),
        Err(EmbeddingFileError::UnsupportedVersion(9))
    ));

    let mut dtype = bytes.clone();
    dtype[20] = 2;
    assert!(matches!(
        read_embedding_table(Cursor::new(&dtype)),
        Err(EmbeddingFileError::UnsupportedDtype(2))
    ));

    let mut nan = bytes.clone();
    nan[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        read_embedding_table(Cursor::new(&nan)),
        Err(EmbeddingFileError::NonFinite { row: 0, col: 1 })
    ));
}

#[test]
fn protocol_matches_in_process_reweighting() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let table = random_table(&mut rng, 80, 6);
    let config = CraegConfig::default().with_tau(0.4);

    let mut input = String::new();
    let mut expected = Vec::new();
    for i in 0..100 {
        let probs = random_probs(&mut rng, 80);
        let dist = NextTokenDistribution::dense(probs.clone()).unwrap();
        let (out, report) = reweight(&dist, &table, &config).unwrap();
        expected.push((out.probs().to_vec(), report.lambda));
        let request = ReweightRequest {
            id: serde_json::json!(format!("req-{i}")),
            token_ids: (0..80).collect(),
            probs,
        };
        input.push_str(&serde_json::to_string(&request).unwrap());
        input.push('\n');
    }

    let mut output = Vec::new();
    let summary = serve_stream(input.as_bytes(), &mut output, &table, &config).unwrap();
    assert_eq!(summary.requests, 100);
    assert_eq!(summary.errors, 0);

    let lines: Vec<&str> = std::str::from_utf8(&output).unwrap().lines().collect();
    assert_eq!(lines.len(), 100);
    for (i, (line, (want, want_lambda))) in lines.iter().zip(&expected).enumerate() {
        match serde_json::from_str::<ReweightResponse>(line).unwrap() {
            ReweightResponse::Ok { id, probs, lambda, .. } => {
                assert_eq!(id, serde_json::json!(format!("req-{i}")));
                for (a, b) in probs.iter().zip(want) {
                    assert!((a - b).abs() <= 1e-9);
                }
                assert!((lambda - want_lambda).abs() <= 1e-9 * want_lambda.max(1.0));
            }
            other => panic!("request {i}: {other:?}"),
        }
    }
}

#[test]
fn truncated_payload_agrees_with_full_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let table = random_table(&mut rng, 200, 8);
    let config = CraegConfig::default();
    for _ in 0..20 {
        let probs = random_probs(&mut rng, 200);
        let full = NextTokenDistribution::dense(probs.clone()).unwrap();
        let (out, _) = reweight(&full, &table, &config).unwrap();

        // Forward only the tokens at or above the threshold.
        let kept: Vec<usize> = (0..200).filter(|&i| probs[i] >= config.epsilon).collect();
        let request = ReweightRequest {
            id: serde_json::Value::Null,
            token_ids: kept.clone(),
            probs: kept.iter().map(|&i| probs[i]).collect(),
        };
        let mut output = Vec::new();
        let line = serde_json::to_string(&request).unwrap();
        serve_stream(line.as_bytes(), &mut output, &table, &config).unwrap();
        let response: ReweightResponse = serde_json::from_slice(&output).unwrap();
        let ReweightResponse::Ok { probs: partial, .. } = response else {
            panic!("unexpected error response");
        };
        for (pos, &id) in kept.iter().enumerate() {
            assert!((partial[pos] - out.probs()[id]).abs() <= 1e-9);
        }
    }
}

#[test]
fn protocol_reports_bad_lines_and_keeps_going() {
    let table = EmbeddingTable::from_rows(&[[1.0f32, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let input = concat!(
        "not json\n",
        "\n",
        r#"{"id": 7, "token_ids": [0, 9], "probs": [0.5, 0.5]}"#,
        "\n",
        r#"{"id": 8, "token_ids": [0, 1, 2], "probs": [0.5, 0.3, 0.2]}"#,
        "\n",
    );
    let mut output = Vec::new();
    let summary =
        serve_stream(input.as_bytes(), &mut output, &table, &CraegConfig::default()).unwrap();
    assert_eq!((summary.requests, summary.errors), (3, 2));
    let responses: Vec<ReweightResponse> = std::str::from_utf8(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(matches!(&responses[0], ReweightResponse::Error { id, .. } if id.is_null()));
    assert!(matches!(&responses[1], ReweightResponse::Error { id, .. } if id == 7));
    assert!(matches!(&responses[2], ReweightResponse::Ok { id, skipped: false, .. } if id == 8));
}

#[test]
fn trace_round_trip_groups_sequences() {
    let mut writer = TraceWriter::new(Vec::new());
    for (sample, correct) in [("s0", true), ("s1", false)] {
        for step in 0..3 {
            writer
                .write(&TraceRecord::Step(StepRecord {
                    step_index: step,
                    token_ids: vec![4, 2, 7],
                    probs: vec![0.6, 0.3, 0.1],
                    mass: 1.0,
                    sampled: 2,
                }))
                .unwrap();
        }
        writer
            .write(&TraceRecord::SequenceEnd(SequenceEnd {
                sample_id: sample.into(),
                problem_id: "p0".into(),
                correct,
                step_count: 3,
            }))
            .unwrap();
    }
    let bytes = writer.into_inner();
    let (sequences, errors) = collect_sequences(TraceReader::new(Cursor::new(bytes)));
    assert!(errors.is_empty());
    assert_eq!(sequences.len(), 2);
    assert_eq!(sequences[1].end.sample_id, "s1");
    assert!(!sequences[1].end.correct);
    assert_eq!(sequences[0].steps.len(), 3);
}
