//! End-to-end tests of the command-line surface: each subcommand is driven
//! in process through `run_cli`, plus a few spawns of the compiled binary to
//! pin down process-level behavior (help text, exit statuses).

use std::path::Path;
use std::process::Command;

use hdd_cli::{exit_code, run_cli};
use hdd_core::error::HddError;
use hdd_core::io::read_manifest;

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("hdd").chain(args.iter().copied()))
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

/// Small but complete run configuration: 8x8 blobs through a narrow convnet.
const SMALL_CONFIG: &str = "curvature_magnitude = 1.0\n\
                            lambda = 20.0\n\
                            lr = 1.0\n\
                            ipc = 2\n\
                            iterations = 3\n\
                            batch_real = 8\n\
                            encoder.kind = convnet3\n\
                            encoder.width = 4\n\
                            encoder.feature_dim = 4\n";

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["distill", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]), 1); // no subcommand
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(run(&["distill", "--no-such-flag"]), 1);
    assert_eq!(run(&["toy-gen", "--kind", "nope", "--out", "/tmp/unused"]), 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "distill",
            "--data",
            dir.path().join("nope").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["toy-gen", "--kind", "gaussian_blobs", "--classes", "2", "--per-class", "4",
              "--size", "8", "--out", data.to_str().unwrap()]),
        0
    );
    let cfg = dir.path().join("bad.cfg");
    write_config(&cfg, "no_such_key = 1\n");
    assert_eq!(
        run(&[
            "distill",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]),
        1
    );
}

#[test]
fn error_kinds_map_to_documented_codes() {
    assert_eq!(exit_code(&HddError::Config("x".into())), 1);
    assert_eq!(exit_code(&HddError::InvalidArgument("x".into())), 1);
    assert_eq!(exit_code(&HddError::Data("x".into())), 2);
    assert_eq!(exit_code(&HddError::Domain("x".into())), 2);
    assert_eq!(exit_code(&HddError::DimensionMismatch("x".into())), 2);
    assert_eq!(exit_code(&HddError::Io(std::io::Error::other("x"))), 2);
    assert_eq!(exit_code(&HddError::Numerical("x".into())), 3);
    assert_eq!(exit_code(&HddError::Convergence { iters: 1, grad_norm: 1.0 }), 3);
}

#[test]
fn toy_distill_analyze_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, SMALL_CONFIG);

    assert_eq!(
        run(&["toy-gen", "--kind", "gaussian_blobs", "--classes", "2", "--per-class", "12",
              "--size", "8", "--noise", "0.05", "--seed", "1", "--out", data.to_str().unwrap()]),
        0
    );
    assert!(data.join("images.hddt").is_file());
    assert!(data.join("labels.hddt").is_file());

    assert_eq!(
        run(&["distill", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
              "--out", out.to_str().unwrap()]),
        0
    );
    assert!(out.join("synthetic.hddt").is_file());
    assert!(out.join("labels.hddt").is_file());
    assert!(out.join("run_record.csv").is_file());
    let manifest = read_manifest(&out.join("manifest.txt")).unwrap();
    let get = |k: &str| {
        manifest
            .iter()
            .find(|(key, _)| key == k)
            .unwrap_or_else(|| panic!("manifest key {k} missing"))
            .1
            .clone()
    };
    assert_eq!(get("iterations"), "3");
    assert_eq!(get("retained"), "24");
    assert!(get("batch_digest").len() == 16);
    let losses = hdd_core::io::read_run_record(&out).unwrap();
    assert_eq!(losses.len(), 3);
    assert_eq!(losses[0].per_class.len(), 2);

    assert_eq!(
        run(&["analyze", "--run", out.to_str().unwrap(), "--tail", "2", "--curve-out",
              dir.path().join("curve.csv").to_str().unwrap()]),
        0
    );
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve.starts_with("radius,weight\n"));
    assert_eq!(curve.lines().count(), 51);

    // The distill output directory itself reloads as a dataset.
    let chart = dir.path().join("chart.csv");
    assert_eq!(
        run(&["export-poincare", "--data", out.to_str().unwrap(),
              "--config", cfg.to_str().unwrap(), "--out", chart.to_str().unwrap()]),
        0
    );
    let chart_text = std::fs::read_to_string(&chart).unwrap();
    assert!(chart_text.starts_with("label,"));
    // 4 synthetic points plus one centroid row per class.
    assert_eq!(chart_text.lines().count(), 1 + 4 + 2);
}

#[test]
fn distill_with_held_out_evaluation_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &format!("{SMALL_CONFIG}eval_every = 2\n"));
    assert_eq!(
        run(&["toy-gen", "--kind", "bars_and_stripes", "--per-class", "10", "--size", "8",
              "--out", data.to_str().unwrap()]),
        0
    );
    assert_eq!(
        run(&["distill", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
              "--out", out.to_str().unwrap(), "--eval-data", data.to_str().unwrap()]),
        0
    );
    let evals = std::fs::read_to_string(out.join("evals.csv")).unwrap();
    assert!(evals.starts_with("iteration,accuracy\n"));
    // Checkpoints land after iteration 2 (the stride) and after the final
    // iteration 3, plus the header line.
    assert_eq!(evals.lines().count(), 3);
}

#[test]
fn prune_study_tabulates_every_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("study");
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, SMALL_CONFIG);
    assert_eq!(
        run(&["toy-gen", "--kind", "gaussian_blobs", "--classes", "2", "--per-class", "10",
              "--size", "8", "--out", data.to_str().unwrap()]),
        0
    );
    assert_eq!(
        run(&["prune-study", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
              "--out", out.to_str().unwrap(), "--alphas", "0.0,0.5", "--tail", "3"]),
        0
    );
    let table = std::fs::read_to_string(out.join("prune_study.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "alpha,retained,final_total,tail_std");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,20,"));
    assert!(lines[2].starts_with("0.5,10,"));
}

#[test]
fn gradcheck_command_passes_on_small_suites() {
    assert_eq!(run(&["gradcheck", "--configs", "4", "--seed", "3"]), 0);
}

#[test]
fn toy_gen_csv_writes_the_fallback_format() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("csvdata");
    assert_eq!(
        run(&["toy-gen", "--kind", "gaussian_blobs", "--classes", "2", "--per-class", "3",
              "--size", "8", "--csv", "--out", data.to_str().unwrap()]),
        0
    );
    let csv = data.join(hdd_core::io::DATASET_CSV_FILE);
    assert!(csv.is_file());
    // The CSV fallback loads back identically to the original tensors.
    let loaded = hdd_core::io::load_dataset(&data).unwrap();
    assert_eq!(loaded.len(), 6);
    assert_eq!(loaded.shape(), (1, 8, 8));
}

#[test]
fn compiled_binary_reports_usage_and_runs() {
    let bin = env!("CARGO_BIN_EXE_hdd");
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "help text: {text}");

    let bad = Command::new(bin).arg("no-such-command").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let gen = Command::new(bin)
        .args(["toy-gen", "--kind", "bars_and_stripes", "--per-class", "4", "--size", "8",
               "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&gen.stderr));
    assert!(dir.path().join("d").join("images.hddt").is_file());

    let missing = Command::new(bin)
        .args(["distill", "--data"])
        .arg(dir.path().join("absent"))
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
