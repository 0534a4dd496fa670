//! Behavior tests for the `scriptorium` binary: exit codes, output file
//! schemas, and cross-command consistency. A small corpus + trained model
//! fixture is built once and shared read-only; each test writes to its own
//! output directory.

use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_scriptorium")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Corpus (3 classes x 2 codices x 8 lines), split, and a 2-epoch model.
fn fixture() -> &'static TempDir {
    static FIXTURE: OnceLock<TempDir> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        run_ok(
            dir.path(),
            &[
                "synth", "--classes", "3", "--codices", "2", "--lines", "8", "--seed", "5",
                "--out", "data",
            ],
        );
        run_ok(
            dir.path(),
            &[
                "split",
                "--manifest",
                "data/manifest.csv",
                "--auto-separate",
                "1",
                "--seed",
                "5",
                "--out",
                "split.json",
            ],
        );
        run_ok(
            dir.path(),
            &[
                "train",
                "--manifest",
                "data/manifest.csv",
                "--split",
                "split.json",
                "--patch-size",
                "16",
                "--conv",
                "4,3,1,pool",
                "--fc",
                "8",
                "--epochs",
                "2",
                "--learning-rate",
                "0.001",
                "--seed",
                "5",
                "--out",
                "run",
            ],
        );
        dir
    })
}

fn read_fixture_file(rel: &str) -> String {
    std::fs::read_to_string(fixture().path().join(rel)).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    // missing required --out
    let out = run_in(Path::new("."), &["synth", "--classes", "3"]);
    assert_eq!(out.status.code(), Some(2));
    // unknown mode value
    let out = run_in(
        Path::new("."),
        &[
            "train", "--manifest", "m.csv", "--split", "s.json", "--mode", "SEPIA", "--out", "o",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    // unknown subcommand
    let out = run_in(Path::new("."), &["transmogrify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_message() {
    let dir = tempfile::tempdir().unwrap();
    // missing checkpoint file
    let out = run_in(
        fixture().path(),
        &[
            "evaluate",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--checkpoint",
            "no-such.ckpt",
            "--out",
            dir.path().to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no-such.ckpt"), "stderr: {stderr}");
}

#[test]
fn split_codex_coverage_errors_name_the_class() {
    // only class 0's codex held out -> scribe01 lacks a separate codex
    let out = run_in(
        fixture().path(),
        &[
            "split",
            "--manifest",
            "data/manifest.csv",
            "--separate",
            "c001",
            "--out",
            "unused-split.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("scribe01") && stderr.contains("no separate codex"),
        "stderr: {stderr}"
    );

    // every codex held out -> scribe00 lacks a training codex
    let out = run_in(
        fixture().path(),
        &[
            "split",
            "--manifest",
            "data/manifest.csv",
            "--separate",
            "c000",
            "--separate",
            "c001",
            "--separate",
            "c002",
            "--separate",
            "c003",
            "--separate",
            "c004",
            "--separate",
            "c005",
            "--out",
            "unused-split.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("scribe00") && stderr.contains("no training codex"),
        "stderr: {stderr}"
    );
}

#[test]
fn split_same_seed_is_identical() {
    let dir = fixture().path();
    run_ok(
        dir,
        &[
            "split",
            "--manifest",
            "data/manifest.csv",
            "--auto-separate",
            "1",
            "--seed",
            "5",
            "--out",
            "split-again.json",
        ],
    );
    assert_eq!(
        read_fixture_file("split.json"),
        read_fixture_file("split-again.json")
    );
}

#[test]
fn train_history_has_one_row_per_epoch() {
    let history = read_fixture_file("run/history.csv");
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss,val_weighted_f1");
    assert_eq!(lines.len(), 1 + 2, "2 epochs -> 2 rows");
}

#[test]
fn train_writes_config_echo() {
    let echo = read_fixture_file("run/train-config.json");
    let parsed: serde_json::Value = serde_json::from_str(&echo).unwrap();
    assert_eq!(parsed["seed"], 5);
    assert_eq!(parsed["patch_size"], 16);
    assert_eq!(parsed["mode"], "GsMask");
}

#[test]
fn evaluate_emits_six_reports_with_split_consistent_supports() {
    let dir = fixture().path();
    run_ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--checkpoint",
            "run/model.ckpt",
            "--out",
            "eval-out",
        ],
    );
    for set in ["test_a", "test_b"] {
        for level in ["patch", "line", "page"] {
            let report: serde_json::Value = serde_json::from_str(
                &read_fixture_file(&format!("eval-out/report_{set}_{level}.json")),
            )
            .unwrap();
            assert!(report["metrics"]["weighted_f1"].is_number());
            assert!(dir
                .join(format!("eval-out/confusion_{set}_{level}.csv"))
                .is_file());
        }
        // line-level supports must equal the split's line count per class
        // (nothing skipped in this corpus)
        let split: serde_json::Value =
            serde_json::from_str(&read_fixture_file("split.json")).unwrap();
        let ids = split[set].as_array().unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&read_fixture_file(&format!("eval-out/report_{set}_line.json")))
                .unwrap();
        let supports: u64 = report["metrics"]["per_class"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["support"].as_u64().unwrap())
            .sum();
        assert_eq!(supports as usize, ids.len());
    }
    assert!(dir.join("eval-out/summary.txt").is_file());
}

#[test]
fn predict_schema_and_histogram_accounting() {
    let dir = fixture().path();
    run_ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            "run/model.ckpt",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--threshold",
            "0.9999",
            "--out",
            "pred-high",
        ],
    );
    let predictions = read_fixture_file("pred-high/predictions.csv");
    let mut lines = predictions.lines();
    assert_eq!(lines.next().unwrap(), "line_id,p_class0,p_class1,p_class2,decision");
    let mut accepted = 0u64;
    let mut rejected = 0u64;
    for row in lines {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5, "row {row}");
        // probabilities parse and sum to 1
        let sum: f64 = fields[1..4].iter().map(|f| f.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "row {row}");
        match fields[4] {
            "REJECT" => rejected += 1,
            name => {
                assert!(name.starts_with("scribe"), "row {row}");
                accepted += 1;
            }
        }
    }
    assert_eq!(accepted + rejected, 48, "one row per corpus line");

    // the histogram counts exactly the accepted lines
    let histogram = read_fixture_file("pred-high/histogram.csv");
    let mut hist_lines = histogram.lines();
    assert_eq!(
        hist_lines.next().unwrap(),
        "section,scribe00,scribe01,scribe02"
    );
    let hist_total: u64 = hist_lines
        .map(|row| {
            row.split(',')
                .skip(1)
                .map(|f| f.parse::<u64>().unwrap())
                .sum::<u64>()
        })
        .sum();
    assert_eq!(hist_total, accepted);

    // threshold 0 accepts everything
    run_ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            "run/model.ckpt",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--threshold",
            "0",
            "--out",
            "pred-zero",
        ],
    );
    assert!(!read_fixture_file("pred-zero/predictions.csv").contains("REJECT"));
}

#[test]
fn predict_on_image_directory() {
    let dir = fixture().path();
    run_ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            "run/model.ckpt",
            "--images",
            "data/c000/p0",
            "--threshold",
            "0.4",
            "--out",
            "pred-dir",
        ],
    );
    let predictions = read_fixture_file("pred-dir/predictions.csv");
    // 8 lines per codex at 8 per page -> p0 holds all 8
    assert_eq!(predictions.lines().count(), 1 + 8);
    // without a split the decisions fall back to positional class names
    assert!(
        predictions.contains("class0")
            || predictions.contains("class1")
            || predictions.contains("class2")
            || predictions.contains("REJECT")
    );
}

#[test]
fn reject_curve_grid_and_boundary_rows() {
    let dir = fixture().path();
    run_ok(
        dir,
        &[
            "reject-curve",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--checkpoint",
            "run/model.ckpt",
            "--partition",
            "test_b",
            "--out",
            "curve-out",
        ],
    );
    let curve = read_fixture_file("curve-out/curve.csv");
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "threshold,reject_rate,error_rate");
    assert_eq!(lines.len(), 1 + 101);
    // threshold 0 rejects nothing
    assert!(lines[1].starts_with("0,0,"));
    let mut prev = -1.0f64;
    for row in &lines[1..] {
        let reject_rate: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(reject_rate >= prev);
        prev = reject_rate;
    }
    // one per-class curve per scribe
    for class in 0..3 {
        assert!(dir
            .join(format!("curve-out/curve_scribe{class:02}.csv"))
            .is_file());
    }
}

#[test]
fn mode_checkpoint_channel_mismatch_is_a_runtime_error() {
    let out = run_in(
        fixture().path(),
        &[
            "evaluate",
            "--manifest",
            "data/manifest.csv",
            "--split",
            "split.json",
            "--checkpoint",
            "run/model.ckpt",
            "--mode",
            "RGB",
            "--out",
            "eval-rgb-mismatch",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("channel"), "stderr: {stderr}");
}

#[test]
fn thread_cap_env_var_is_validated() {
    let out = Command::new(bin())
        .current_dir(fixture().path())
        .env("SCRIPTORIUM_THREADS", "zero")
        .args(["synth", "--classes", "2", "--codices", "2", "--lines", "1", "--out", "t-env"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(bin())
        .current_dir(fixture().path())
        .env("SCRIPTORIUM_THREADS", "1")
        .args(["synth", "--classes", "2", "--codices", "2", "--lines", "1", "--seed", "3", "--out", "t-env"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
