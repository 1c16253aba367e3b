//! End-to-end tests of the `dppsel` binary: every subcommand, the exit-code
//! contract, config-file layering, and manifest emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dppsel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout_of(out),
        stderr_of(out)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Small dataset: 12 queries, pools of 6, hop mix 2/3.
fn small_dataset(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = dir.join("data");
    let out = run(&[
        "synth",
        "--out-dir",
        path_str(&data),
        "--queries",
        "12",
        "--dim",
        "8",
        "--k-pos",
        "3",
        "--k-cycle",
        "2,3",
        "--pool-size",
        "6",
        "--seed",
        "11",
    ]);
    assert_exit(&out, 0);
    (
        data.join("pools.jsonl"),
        data.join("tuples.jsonl"),
        data.join("embeddings.jsonl"),
    )
}

// ───────────────────────── select ─────────────────────────

#[test]
fn select_emits_one_line_per_pool() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let out = run(&["select", "--pools", path_str(&pools), "--k", "3"]);
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    assert_eq!(lines.len(), 12);
    for line in lines {
        // Field order is part of the output contract.
        assert!(line.starts_with("{\"query_id\":"), "line: {line}");
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["selected_ids"].as_array().unwrap().len(), 3);
        assert!(v["logdet"].is_f64() || v["logdet"].is_i64());
        assert!(v["kernel_ms"].as_f64().unwrap() >= 0.0);
        assert!(v["select_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn select_missing_file_is_input_error() {
    let out = run(&["select", "--pools", "/no/such/file.jsonl"]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("error:"));
}

#[test]
fn select_k_beyond_pool_is_input_error() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let out = run(&["select", "--pools", path_str(&pools), "--k", "25"]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("exceeds pool"));
}

#[test]
fn select_writes_manifest_next_to_out() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let sel = dir.path().join("sel.jsonl");
    let out = run(&[
        "select",
        "--pools",
        path_str(&pools),
        "--k",
        "2",
        "--out",
        path_str(&sel),
        "--seed",
        "3",
    ]);
    assert_exit(&out, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sel.jsonl.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "select");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["k"], 2);
    let sha = manifest["inputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(sha.len(), 64);
    assert_eq!(fs::read_to_string(&sel).unwrap().lines().count(), 12);
}

// ───────────────────────── train ─────────────────────────

#[test]
fn train_zero_epochs_writes_initial_params() {
    let dir = TempDir::new().unwrap();
    let (_, tuples, emb) = small_dataset(dir.path());
    let params = dir.path().join("params.json");
    let out = run(&[
        "train",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&params),
        "--epochs",
        "0",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0);
    // Must equal a fresh initialization at the same seed, byte for byte.
    let fresh = dir.path().join("fresh.json");
    dppsel::adapter::save_params(&dppsel::adapter::init_params(8, 5), &fresh).unwrap();
    assert_eq!(fs::read(&params).unwrap(), fs::read(&fresh).unwrap());
    // History exists with only the header: zero epochs, zero rows.
    let history = fs::read_to_string(dir.path().join("params.history.csv")).unwrap();
    assert_eq!(history, "epoch,mean_loss,skipped_examples\n");
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (_, tuples, emb) = small_dataset(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let params = dir.path().join(format!("{name}.json"));
        let out = run(&[
            "train",
            "--tuples",
            path_str(&tuples),
            "--embeddings",
            path_str(&emb),
            "--out",
            path_str(&params),
            "--epochs",
            "2",
            "--seed",
            "9",
        ]);
        assert_exit(&out, 0);
        outputs.push((
            fs::read(&params).unwrap(),
            fs::read(dir.path().join(format!("{name}.history.csv"))).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_nll_loss_dispatches() {
    let dir = TempDir::new().unwrap();
    let (_, tuples, emb) = small_dataset(dir.path());
    let params = dir.path().join("nll.json");
    let out = run(&[
        "train",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&params),
        "--epochs",
        "1",
        "--loss",
        "nll",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0);
    let history = fs::read_to_string(dir.path().join("nll.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2); // header + one epoch
}

// ───────────────────────── eval ─────────────────────────

#[test]
fn eval_mode_matrix_has_six_rows_per_k_with_params() {
    let dir = TempDir::new().unwrap();
    let (pools, tuples, emb) = small_dataset(dir.path());
    let params = dir.path().join("params.json");
    let out = run(&[
        "train",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&params),
        "--epochs",
        "1",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0);
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--pools",
        path_str(&pools),
        "--params",
        path_str(&params),
        "--k-list",
        "4,2",
        "--out",
        path_str(&report),
    ]);
    assert_exit(&out, 0);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 12); // 2 cutoffs × 3 modes × quality on/off
    let with_k4 = rows.iter().filter(|r| r["k"] == 4).count();
    assert_eq!(with_k4, 6);
}

#[test]
fn eval_without_params_drops_adapter_rows() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--pools",
        path_str(&pools),
        "--k-list",
        "4",
        "--out",
        path_str(&report),
    ]);
    assert_exit(&out, 0);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4); // topk, dpp-base × quality on/off
    assert!(rows.iter().all(|r| r["mode"] != "dpp-adapter"));
}

#[test]
fn eval_perfect_pool_scores_one() {
    let dir = TempDir::new().unwrap();
    // One pool of three orthogonal candidates, all gold.
    let pool = serde_json::json!({
        "query_id": "q0",
        "candidates": [
            {"id": "a", "vector": [1.0, 0.0, 0.0], "score": 1.0},
            {"id": "b", "vector": [0.0, 1.0, 0.0], "score": 0.9},
            {"id": "c", "vector": [0.0, 0.0, 1.0], "score": 0.8},
        ],
        "gold_ids": ["a", "b", "c"],
    });
    let pools = dir.path().join("pools.jsonl");
    fs::write(&pools, format!("{pool}\n")).unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--pools",
        path_str(&pools),
        "--k-list",
        "3",
        "--quality",
        "on",
        "--out",
        path_str(&report),
    ]);
    assert_exit(&out, 0);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for row in rows.as_array().unwrap() {
        assert_eq!(row["overall"]["recall"], 1.0, "row: {row}");
        assert_eq!(row["overall"]["ndcg"], 1.0);
        assert_eq!(row["overall"]["hits"], 1.0);
    }
}

#[test]
fn eval_empty_pools_file_is_input_error() {
    let dir = TempDir::new().unwrap();
    let pools = dir.path().join("empty.jsonl");
    fs::write(&pools, "").unwrap();
    let out = run(&["eval", "--pools", path_str(&pools)]);
    assert_exit(&out, 2);
}

#[test]
fn eval_adapter_mode_without_params_is_input_error() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let out = run(&["eval", "--pools", path_str(&pools), "--mode", "dpp-adapter"]);
    assert_exit(&out, 2);
}

// ───────────────────────── margins ─────────────────────────

#[test]
fn margins_reports_raw_and_adapter_rows_per_hop() {
    let dir = TempDir::new().unwrap();
    let (_, tuples, emb) = small_dataset(dir.path());
    let params = dir.path().join("params.json");
    let out = run(&[
        "train",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&params),
        "--epochs",
        "1",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0);
    let rows_path = dir.path().join("margins.json");
    let out = run(&[
        "margins",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
        "--params",
        path_str(&params),
        "--out",
        path_str(&rows_path),
    ]);
    assert_exit(&out, 0);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&rows_path).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    // Hops 2 and 3 plus the aggregate, each in raw and adapter space.
    assert_eq!(rows.len(), 6);
    for hop in ["2", "3", "all"] {
        for space in ["raw", "adapter"] {
            assert!(
                rows.iter().any(|r| r["hop"] == hop && r["space"] == space),
                "missing {hop}/{space}"
            );
        }
    }
    // Fractions are proportions of the group.
    for r in rows {
        let neg = r["negative_fraction"].as_f64().unwrap();
        let pos = r["positive_fraction"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&neg) && (0.0..=1.0).contains(&pos));
    }
}

#[test]
fn margins_without_params_has_raw_rows_only() {
    let dir = TempDir::new().unwrap();
    let (_, tuples, emb) = small_dataset(dir.path());
    let out = run(&[
        "margins",
        "--tuples",
        path_str(&tuples),
        "--embeddings",
        path_str(&emb),
    ]);
    assert_exit(&out, 0);
    assert!(!stdout_of(&out).contains("adapter"));
}

// ───────────────────────── check ─────────────────────────

#[test]
fn check_passes_and_scales_trials() {
    let dir = TempDir::new().unwrap();
    let report_path = dir.path().join("check.json");
    let out = run(&[
        "check",
        "--trials",
        "60",
        "--seed",
        "1",
        "--out",
        path_str(&report_path),
    ]);
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert!(text.contains("PASS partition-identity"));
    assert!(text.trim_end().ends_with("10/10 checks passed"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);
    let exact = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "greedy-vs-exact")
        .unwrap();
    assert_eq!(exact["trials"], 60);
}

// ───────────────────────── synth and split ─────────────────────────

#[test]
fn synth_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut digests = Vec::new();
    for name in ["x", "y"] {
        let data = dir.path().join(name);
        let out = run(&[
            "synth",
            "--out-dir",
            path_str(&data),
            "--queries",
            "8",
            "--dim",
            "8",
            "--k-pos",
            "2",
            "--pool-size",
            "5",
            "--seed",
            "21",
        ]);
        assert_exit(&out, 0);
        digests.push((
            fs::read(data.join("pools.jsonl")).unwrap(),
            fs::read(data.join("tuples.jsonl")).unwrap(),
            fs::read(data.join("embeddings.jsonl")).unwrap(),
        ));
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn split_single_stratum_honors_exact_ratio() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let out = run(&[
        "synth",
        "--out-dir",
        path_str(&data),
        "--queries",
        "100",
        "--dim",
        "8",
        "--k-pos",
        "2",
        "--pool-size",
        "5",
        "--seed",
        "13",
    ]);
    assert_exit(&out, 0);
    let split = dir.path().join("split");
    let out = run(&[
        "split",
        "--pools",
        path_str(&data.join("pools.jsonl")),
        "--tuples",
        path_str(&data.join("tuples.jsonl")),
        "--ratio",
        "5:1:4",
        "--out-dir",
        path_str(&split),
        "--seed",
        "2",
    ]);
    assert_exit(&out, 0);
    let count = |name: &str| {
        fs::read_to_string(split.join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(count("pools.train.jsonl"), 50);
    assert_eq!(count("pools.dev.jsonl"), 10);
    assert_eq!(count("pools.test.jsonl"), 40);
    assert_eq!(count("tuples.train.jsonl"), 50);
    assert_eq!(count("tuples.test.jsonl"), 40);
}

#[test]
fn split_rejects_bad_ratio() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let out = run(&[
        "split",
        "--pools",
        path_str(&pools),
        "--ratio",
        "5:1",
        "--out-dir",
        path_str(&dir.path().join("s")),
    ]);
    assert_exit(&out, 2);
}

// ───────────────────────── config file ─────────────────────────

#[test]
fn config_unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": 2, "not_a_key": true}"#).unwrap();
    let out = run(&[
        "select",
        "--config",
        path_str(&cfg),
        "--pools",
        path_str(&pools),
    ]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("unknown field"));
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": 3}"#).unwrap();
    // Config alone: 3 ids per line.
    let out = run(&[
        "select",
        "--config",
        path_str(&cfg),
        "--pools",
        path_str(&pools),
    ]);
    assert_exit(&out, 0);
    let first: serde_json::Value =
        serde_json::from_str(stdout_of(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["selected_ids"].as_array().unwrap().len(), 3);
    // Flag wins: 2 ids per line.
    let out = run(&[
        "select",
        "--config",
        path_str(&cfg),
        "--k",
        "2",
        "--pools",
        path_str(&pools),
    ]);
    assert_exit(&out, 0);
    let first: serde_json::Value =
        serde_json::from_str(stdout_of(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["selected_ids"].as_array().unwrap().len(), 2);
}

#[test]
fn threads_flag_caps_workers() {
    let dir = TempDir::new().unwrap();
    let (pools, _, _) = small_dataset(dir.path());
    let out = run(&[
        "select",
        "--pools",
        path_str(&pools),
        "--k",
        "2",
        "--threads",
        "1",
    ]);
    assert_exit(&out, 0);
    assert_eq!(stdout_of(&out).lines().count(), 12);
}
