//! End-to-end tests of the `tpmix` binary: argument handling, exit codes,
//! and the shape of emitted files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tpmix"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().expect("no signal"),
        format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

#[test]
fn help_and_version_exit_zero() {
    let out = run_ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for sub in ["run", "bench", "validate"] {
        assert!(text.contains(sub), "help missing '{sub}':\n{text}");
    }
    run_ok(&["--version"]);
}

#[test]
fn bad_invocations_are_input_errors() {
    let (code, msg) = exit_code(&["run", "--data", "/definitely/not/here.csv"]);
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("not/here.csv"), "{msg}");

    let (code, _) = exit_code(&["run", "--no-such-flag"]);
    assert_eq!(code, 1);

    let (code, msg) = exit_code(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--threshold",
        "2.0",
    ]);
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("threshold"), "{msg}");
}

#[test]
fn malformed_and_unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{not json").unwrap();
    let (code, msg) = exit_code(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{msg}");

    std::fs::write(&cfg, r#"{"particle_count": 5}"#).unwrap();
    let (code, msg) = exit_code(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("particle_count"), "{msg}");
}

#[test]
fn run_emits_wellformed_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--particles",
        "15",
        "--batch",
        "10",
        "--mc-draws",
        "400",
        "--seed",
        "11",
        "--out",
        dir.path().to_str().unwrap(),
    ]);

    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let mut lines = steps.lines();
    assert_eq!(
        lines.next().unwrap(),
        "i,x,y_true,pred_mean,lower95,upper95,sq_err,cluster,n_eff,resampled,micros"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 39); // 40 observations, first is init-only

    let mut sq_sum = 0.0;
    for (k, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 11, "row: {row}");
        let i: usize = fields[0].parse().unwrap();
        assert_eq!(i, k + 2);
        let pred: f64 = fields[3].parse().unwrap();
        let y: f64 = fields[2].parse().unwrap();
        let sq: f64 = fields[6].parse().unwrap();
        assert_eq!(sq.to_bits(), ((pred - y) * (pred - y)).to_bits());
        let lower: f64 = fields[4].parse().unwrap();
        let upper: f64 = fields[5].parse().unwrap();
        assert!(lower < upper, "row: {row}");
        assert!(matches!(fields[9], "true" | "false"));
        sq_sum += sq;
    }

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["dataset"], "sine");
    assert_eq!(summary["n"], 40);
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["config"]["particles"], 15);
    let mse = summary["mse"].as_f64().unwrap();
    assert!((mse - sq_sum / 39.0).abs() < 1e-12);
    let coverage = summary["coverage95"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&coverage));
    assert!(summary["runtime_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"particles": 5, "seed": 2, "batch": 6}"#).unwrap();
    run_ok(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--particles",
        "9",
        "--mc-draws",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["config"]["particles"], 9); // flag wins
    assert_eq!(summary["config"]["seed"], 2); // file survives
    assert_eq!(summary["config"]["batch"], 6);
}

#[test]
fn running_standardization_mode_works() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "run",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--particles",
        "10",
        "--batch",
        "8",
        "--mc-draws",
        "200",
        "--standardize",
        "running",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["config"]["standardize"], "running");
}

#[test]
fn bench_reports_per_seed_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&[
        "bench",
        "--data",
        fixture("sine.csv").to_str().unwrap(),
        "--particles",
        "10",
        "--batch",
        "8",
        "--mc-draws",
        "200",
        "--repeats",
        "3",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for seed in [5, 6, 7] {
        assert!(text.contains(&format!("seed {seed}:")), "{text}");
    }

    let bench: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("bench.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(bench["repeats"], 3);
    assert_eq!(bench["seeds"], serde_json::json!([5, 6, 7]));
    let per_seed: Vec<f64> = bench["mse_per_seed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(per_seed.len(), 3);
    let mean = per_seed.iter().sum::<f64>() / 3.0;
    assert!((bench["mse_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(bench["mse_se"].as_f64().unwrap() > 0.0);
}

#[test]
fn validate_subcommand_passes() {
    let out = run_ok(&["validate"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("all 9 self-checks passed"), "{text}");
    assert!(!text.contains("FAILED"), "{text}");
}
