use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use craeg::trace_io::save_embedding_table;
use craeg::EmbeddingTable;
use serde_json::Value;

fn craeg() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_craeg"));
    cmd.env_remove("CRAEG_LOG");
    cmd
}

fn run_with_stdin(mut cmd: Command, input: &str) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn three_token_table(dir: &Path) -> PathBuf {
    let path = dir.join("three.crwd");
    let table = EmbeddingTable::from_rows(&[[1.0f32, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    save_embedding_table(&table, &path).unwrap();
    path
}

fn probs(v: &Value, key: &str) -> Vec<f64> {
    v[key]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn reweight_reproduces_the_three_token_case() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());
    let mut cmd = craeg();
    cmd.args(["reweight", "--tau", "0.3", "--table"]).arg(&table);
    let out = run_with_stdin(cmd, r#"{"probs": [0.5, 0.3, 0.2]}"#);
    let v = json_stdout(&out);
    let p = probs(&v, "probs_out");
    let printed: Vec<String> = p.iter().map(|x| format!("{x:.4}")).collect();
    assert_eq!(printed, ["0.4454", "0.2773", "0.2774"]);
    assert_eq!(format!("{:.4}", v["lambda"].as_f64().unwrap()), "2.8612");
    assert_eq!(format!("{:.4}", v["achieved_reduction"].as_f64().unwrap()), "0.2789");
    assert!(v["skipped"].is_null());
    assert!(
        v["crowding_after"]["step"].as_f64().unwrap()
            < v["crowding_before"]["step"].as_f64().unwrap()
    );
}

#[test]
fn reweight_accepts_logits_and_truncates() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());
    let input = dir.path().join("in.json");
    std::fs::write(&input, r#"{"logits": [2.0, 1.5, 0.1]}"#).unwrap();
    let out = craeg()
        .args(["reweight", "--top-p", "0.5", "--temperature", "0.7", "--table"])
        .arg(&table)
        .arg("--input")
        .arg(&input)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    let v = json_stdout(&out);
    let truncated = probs(&v, "probs_truncated");
    assert!((truncated.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(truncated.iter().filter(|&&x| x == 0.0).count() >= 1);
    assert!(dir.path().join("out/reweight.json").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());
    let config = dir.path().join("craeg.toml");
    std::fs::write(&config, "tau = 0.0\nlog_level = \"warn\"\n").unwrap();

    let mut cmd = craeg();
    cmd.args(["reweight", "--config"]).arg(&config).arg("--table").arg(&table);
    let v = json_stdout(&run_with_stdin(cmd, r#"{"probs": [0.5, 0.3, 0.2]}"#));
    assert_eq!(probs(&v, "probs_out"), [0.5, 0.3, 0.2]);
    assert_eq!(v["skipped"], "zero_strength");

    let mut cmd = craeg();
    cmd.args(["reweight", "--tau", "0.3", "--config"])
        .arg(&config)
        .arg("--table")
        .arg(&table);
    let v = json_stdout(&run_with_stdin(cmd, r#"{"probs": [0.5, 0.3, 0.2]}"#));
    assert!(v["skipped"].is_null());
}

#[test]
fn serve_answers_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());
    let mut cmd = craeg();
    cmd.args(["serve", "--tau", "0.3", "--table"]).arg(&table);
    let input = concat!(
        r#"{"id": "b", "token_ids": [0, 1, 2], "probs": [0.5, 0.3, 0.2]}"#,
        "\n",
        "garbage\n",
        r#"{"id": "a", "token_ids": [2, 0], "probs": [0.6, 0.4]}"#,
        "\n",
    );
    let out = run_with_stdin(cmd, input);
    assert!(out.status.success());
    let lines: Vec<Value> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["id"], "b");
    assert!((lines[0]["probs"][0].as_f64().unwrap() - 0.445383).abs() < 1e-6);
    assert!(lines[1]["error"].is_string());
    assert_eq!(lines[2]["id"], "a");
    assert_eq!(lines[2]["skipped"], true);
}

const SMALL_SIM: [&str; 10] = [
    "--vocab", "80", "--dim", "16", "--cluster-size", "6", "--trials", "12", "--steps", "16",
];

#[test]
fn simulate_is_deterministic_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let first = craeg()
        .arg("simulate")
        .args(SMALL_SIM)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    let second = craeg().arg("simulate").args(SMALL_SIM).output().unwrap();
    let v = json_stdout(&first);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(v["arms"][0]["arm"], "baseline");
    for name in [
        "arms.csv",
        "trials.csv",
        "reduction_profile.csv",
        "prob_by_crowding.csv",
        "simulation.json",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let trials = std::fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 13);
}

#[test]
fn simulate_zero_tau_matches_baseline() {
    let out = craeg()
        .arg("simulate")
        .args(SMALL_SIM)
        .args(["--tau", "0"])
        .output()
        .unwrap();
    let v = json_stdout(&out);
    assert_eq!(v["arms"][0]["mean_step_crowding"], v["arms"][1]["mean_step_crowding"]);
    assert_eq!(v["arms"][0]["distinct_n"], v["arms"][1]["distinct_n"]);
    assert_eq!(v["skipped_fraction"], 1.0);
}

#[test]
fn analyze_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());
    let mut traces = String::new();
    for s in 0..6 {
        let p0 = 0.45 + 0.06 * s as f64;
        for step in 0..4 {
            traces.push_str(&format!(
                r#"{{"kind":"step","step_index":{step},"token_ids":[0,1,2],"probs":[{p0},{},0.1],"mass":1.0,"sampled":0}}"#,
                0.9 - p0
            ));
            traces.push('\n');
        }
        traces.push_str(&format!(
            r#"{{"kind":"sequence_end","sample_id":"s{s}","problem_id":"p","correct":{},"step_count":4}}"#,
            s % 2 == 0
        ));
        traces.push('\n');
    }
    traces.push_str("{\"kind\": \"oops\"}\n");
    let trace_path = dir.path().join("traces.jsonl");
    std::fs::write(&trace_path, traces).unwrap();
    let out_dir = dir.path().join("analysis");
    let out = craeg()
        .args(["analyze", "--bins", "5", "--table"])
        .arg(&table)
        .arg("--traces")
        .arg(&trace_path)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    let v = json_stdout(&out);
    assert_eq!(v["sequences"], 6);
    assert_eq!(v["steps"], 24);
    assert_eq!(v["rejected_lines"], 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 31"));
    for name in [
        "sequences.csv",
        "steps.csv",
        "tertiles.csv",
        "regression.csv",
        "ecdf_correct.csv",
        "ecdf_incorrect.csv",
        "prob_by_crowding.csv",
        "analysis.json",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
}

#[test]
fn metrics_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let mut lines = String::new();
    // Problem a: 1 of 8 correct; problem b: none.
    for i in 0..8 {
        lines.push_str(&format!(
            r#"{{"problem_id":"a","sample_id":"a{i}","correct":{},"tokens":["x","y","z","w","v"],"embedding":[1.0,0.0]}}"#,
            i == 0
        ));
        lines.push('\n');
        lines.push_str(&format!(
            r#"{{"problem_id":"b","correct":false,"tokens":[{i},{i},{i},{i},{i}],"embedding":[{},{}]}}"#,
            (i % 2) as f64,
            ((i + 1) % 2) as f64
        ));
        lines.push('\n');
    }
    std::fs::write(&path, lines).unwrap();
    let out = craeg()
        .args(["metrics", "--k", "1,4,8", "--ngram", "4", "--results"])
        .arg(&path)
        .output()
        .unwrap();
    let v = json_stdout(&out);
    assert_eq!(v["problems"], 2);
    assert_eq!(v["avg_at_k"], 100.0 / 16.0);
    // pass@4 for n = 8, c = 1 is 1 - 35/70 = 0.5; averaged with 0.
    assert_eq!(v["pass_at_k"]["pass@4"], 25.0);
    assert_eq!(v["pass_at_k"]["pass@8"], 50.0);
    // a: 8 copies of one 5-token sequence, 2 unique of 16; b: 1 unique of 2 per sequence, 8 unique of 16.
    assert_eq!(v["distinct_n"], (100.0 * 2.0 / 16.0 + 100.0 * 8.0 / 16.0) / 2.0);
    assert!(v["semantic_diversity"].as_f64().is_some());
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let table = three_token_table(dir.path());

    let usage = craeg().arg("reweight").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let config = craeg()
        .args(["reweight", "--tau", "1.5", "--table"])
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(config.status.code(), Some(3));

    let missing = craeg()
        .args(["serve", "--table"])
        .arg(dir.path().join("nope.crwd"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let bad_file = dir.path().join("bad.crwd");
    std::fs::write(&bad_file, b"not an embedding table at all, no").unwrap();
    let bad = craeg().args(["serve", "--table"]).arg(&bad_file).output().unwrap();
    assert_eq!(bad.status.code(), Some(5));

    let no_traces = craeg()
        .args(["analyze", "--table"])
        .arg(&table)
        .arg("--traces")
        .arg(dir.path().join("absent.jsonl"))
        .output()
        .unwrap();
    assert_eq!(no_traces.status.code(), Some(4));

    let infeasible = craeg()
        .args(["simulate", "--dim", "8", "--cluster-size", "10"])
        .output()
        .unwrap();
    assert_eq!(infeasible.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("need dim"));
}
