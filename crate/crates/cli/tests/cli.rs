use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn idx_images(n: usize, seed: u8) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803u32, n as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    // Class k images are bright in band k, dark elsewhere.
    for i in 0..n {
        let band = i % 10;
        for p in 0..784usize {
            let on = (p / 28) * 10 / 28 == band;
            let jitter = ((p * 31 + i * 7 + seed as usize) % 40) as u8;
            b.push(if on { 200 + jitter } else { jitter });
        }
    }
    b
}

fn idx_labels(n: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0801u32, n as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..n).map(|i| (i % 10) as u8));
    b
}

fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("train-images-idx3-ubyte"), idx_images(60, 0)).unwrap();
    fs::write(p.join("train-labels-idx1-ubyte"), idx_labels(60)).unwrap();
    fs::write(p.join("t10k-images-idx3-ubyte"), idx_images(30, 3)).unwrap();
    fs::write(p.join("t10k-labels-idx1-ubyte"), idx_labels(30)).unwrap();
    dir
}

fn valp(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valp"))
        .env("VALP_DATA_DIR", data)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn synth_validate_train_sample_roundtrip() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let graph = work.path().join("g.json");
    let g = graph.to_str().unwrap();
    ok(&valp(data.path(), &["synth", "--seed", "4", "--out", g]));
    assert!(work.path().join("g.dot").exists());
    assert_eq!(ok(&valp(data.path(), &["validate", g])).trim(), "ok");

    let dot = ok(&valp(data.path(), &["export-dot", g]));
    assert!(dot.starts_with("digraph"));

    let trained = ok(&valp(
        data.path(),
        &[
            "train",
            g,
            "--steps",
            "4",
            "--batch",
            "10",
            "--train-size",
            "40",
        ],
    ));
    assert!(trained.contains("final composite"), "{trained}");
    assert!(trained.contains("o2 accuracy"), "{trained}");
    let trace = fs::read_to_string(work.path().join("g.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);
    assert!(trace.starts_with("step,composite,"));

    let samples = ok(&valp(data.path(), &["sample", g, "--n", "3"]));
    let rows: Vec<&str> = samples.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].split(',').count(), 784);
}

#[test]
fn same_seed_gives_identical_graphs() {
    let data = fixture();
    let a = ok(&valp(
        data.path(),
        &["synth", "--seed", "11", "--max-n", "6"],
    ));
    let b = ok(&valp(
        data.path(),
        &["synth", "--seed", "11", "--max-n", "6"],
    ));
    assert_eq!(a, b);
    let c = ok(&valp(
        data.path(),
        &["synth", "--seed", "12", "--max-n", "6"],
    ));
    assert_ne!(a, c);
}

#[test]
fn invalid_graph_and_bad_flags_fail() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let graph = work.path().join("g.json");
    let g = graph.to_str().unwrap();
    ok(&valp(data.path(), &["synth", "--out", g]));
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&graph).unwrap()).unwrap();
    v["deleted_at_inference"] = serde_json::json!([]);
    fs::write(&graph, v.to_string()).unwrap();
    let out = valp(data.path(), &["validate", g]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"V"));

    assert!(!valp(data.path(), &["synth", "--beta", "1,2"])
        .status
        .success());
    assert!(!valp(data.path(), &["synth", "--max-n", "3"])
        .status
        .success());
}

#[test]
fn search_writes_csv_and_graphs() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().to_str().unwrap();
    ok(&valp(
        data.path(),
        &[
            "search",
            "--configs",
            "2",
            "--steps",
            "3",
            "--batch",
            "10",
            "--out",
            out,
        ],
    ));
    let csv = fs::read_to_string(work.path().join("search.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "config,seed,acc,mse,entropy,cond_acc,loss_mse,loss_xent,loss_nll,loss_kl,wall_s,graph,error"
    );
    assert_eq!(lines.len(), 3);
    assert!(work.path().join("config_000.json").exists());
}

#[test]
fn baseline_reports_both_tasks() {
    let data = fixture();
    let text = ok(&valp(
        data.path(),
        &["baseline", "--steps", "30", "--batch", "20"],
    ));
    assert!(text.contains("classification accuracy"));
    assert!(text.contains("predict-mean mse"));
}
