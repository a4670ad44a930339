//! End-to-end tests of the command-line interface: exit codes, file formats,
//! precedence rules and reproducibility, exercised through the real binary.

#![allow(clippy::excessive_precision)]

use std::path::Path;
use std::process::{Command, Output};

use relay_aoi::cli::{parse_sweep_jsonl, SWEEP_CSV_HEADER};
use relay_aoi::link_model::SystemConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relay-aoi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn analyze_empty_config_plus_lambda_is_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("empty.cfg");
    std::fs::write(&cfg_path, "# all defaults\n").unwrap();
    let out = run(&[
        "analyze",
        "--config",
        cfg_path.to_str().unwrap(),
        "--lambda-rate",
        "22",
        "--json",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cfg: SystemConfig =
        serde_json::from_value(doc["manifest"]["config"].clone()).unwrap();
    assert_eq!(cfg, SystemConfig::baseline(22.0));
    let aaoi = doc["result"]["estimate"]["aaoi"].as_f64().unwrap();
    assert!((aaoi - 0.089018983619324009).abs() < 1e-12);
}

#[test]
fn analyze_range_error_names_key_and_exits_2() {
    let out = run(&["analyze", "--lambda-rate", "22", "--tau", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tau"), "stderr: {}", stderr(&out));
}

#[test]
fn analyze_unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "total_power_w = 0.2\n").unwrap();
    let out = run(&[
        "analyze",
        "--config",
        cfg_path.to_str().unwrap(),
        "--lambda-rate",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("total_power_w"));
}

#[test]
fn analyze_missing_lambda_exits_2() {
    let out = run(&["analyze"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda_rate"));
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("n300.cfg");
    std::fs::write(&cfg_path, "n_total = 300\nlambda_rate = 22\n").unwrap();
    let out = run(&[
        "analyze",
        "--config",
        cfg_path.to_str().unwrap(),
        "--n-total",
        "100",
        "--json",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["manifest"]["config"]["n_total"], 100);
}

#[test]
fn analyze_unstable_exits_3_with_report() {
    let out = run(&["analyze", "--lambda-rate", "40"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("UNSTABLE"));
}

#[test]
fn analyze_result_is_pure_function_of_config() {
    let a = run(&["analyze", "--lambda-rate", "22", "--json"]);
    let b = run(&["analyze", "--lambda-rate", "22", "--json"]);
    let da: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    let db: serde_json::Value = serde_json::from_str(&stdout(&b)).unwrap();
    // The manifest timestamp may differ between invocations; the result and
    // resolved configuration may not.
    assert_eq!(da["result"], db["result"]);
    assert_eq!(da["manifest"]["config"], db["manifest"]["config"]);
}

#[test]
fn lambda_sweep_csv_has_header_plus_33_rows() {
    let out = run(&["sweep", "--param", "lambda"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 34, "expected header + 33 rows");
    assert_eq!(lines[0], SWEEP_CSV_HEADER);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 6, "bad row: {line}");
    }
    // The argmin report goes to stderr, leaving the CSV clean.
    assert!(stderr(&out).contains("argmin"));
}

#[test]
fn sweep_unstable_rows_print_inf_and_false() {
    let out = run(&[
        "sweep",
        "--param",
        "lambda",
        "--grid",
        "30:40:1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let unstable: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",false"))
        .collect();
    assert!(!unstable.is_empty(), "expected unstable rows beyond 33.3/s");
    for line in unstable {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "inf", "unstable analytic field must be inf: {line}");
    }
}

#[test]
fn sweep_out_writes_csv_and_manifest_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("lambda.csv");
    let out = run(&[
        "sweep",
        "--param",
        "lambda",
        "--grid",
        "20:24:1",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 6);
    let sidecar = dir.path().join("lambda.csv.manifest.json");
    assert!(sidecar.exists(), "manifest sidecar missing");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sidecar).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "sweep");
    assert_eq!(manifest["grid"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_jsonl_round_trips_through_parser() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eta.jsonl");
    let out = run(&[
        "sweep",
        "--param",
        "eta-sr",
        "--lambda-rate",
        "22",
        "--grid",
        "0.3,0.5,0.7",
        "--format",
        "json-lines",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    let (manifest, result) = parse_sweep_jsonl(&text).unwrap();
    assert_eq!(manifest.subcommand, "sweep");
    assert_eq!(result.rows.len(), 3);
    let (arg, _) = result.argmin.unwrap();
    assert_eq!(arg, 0.5);
    // Emitting the parsed result again reproduces the file byte-for-byte.
    let again = relay_aoi::cli::sweep_to_jsonl(&manifest, &result);
    assert_eq!(text, again);
}

#[test]
fn sweep_rejects_malformed_grid() {
    let out = run(&["sweep", "--param", "n", "--lambda-rate", "22", "--grid", "10.5,20"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_total"));
}

#[test]
fn simulate_seeded_runs_reproduce() {
    let args = [
        "simulate",
        "--lambda-rate",
        "22",
        "--horizon-s",
        "500",
        "--replications",
        "3",
        "--seed",
        "9",
        "--json",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "stderr: {}", stderr(&a));
    let da: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    let db: serde_json::Value = serde_json::from_str(&stdout(&b)).unwrap();
    assert_eq!(da["result"], db["result"], "same seeds must reproduce");
    let c = run(&[
        "simulate",
        "--lambda-rate",
        "22",
        "--horizon-s",
        "500",
        "--replications",
        "3",
        "--seed",
        "10",
        "--json",
    ]);
    let dc: serde_json::Value = serde_json::from_str(&stdout(&c)).unwrap();
    assert_ne!(da["result"]["mean_aaoi"], dc["result"]["mean_aaoi"]);
}

#[test]
fn simulate_writes_trace_with_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "simulate",
        "--lambda-rate",
        "10",
        "--horizon-s",
        "50",
        "--replications",
        "1",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "gen_time,depart_time,attempts,age_after"
    );
    let first = lines.next().expect("at least one delivery");
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields.len(), 4);
    let gen: f64 = fields[0].parse().unwrap();
    let depart: f64 = fields[1].parse().unwrap();
    assert!(depart > gen);
}

#[test]
fn simulate_no_delivery_exits_3() {
    // Horizon shorter than a single round.
    let out = run(&[
        "simulate",
        "--lambda-rate",
        "22",
        "--horizon-s",
        "0.02",
        "--replications",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no update"));
}

#[test]
fn validate_passes_at_reduced_but_honest_scale() {
    let out = run(&[
        "validate",
        "--horizon-s",
        "2000",
        "--replications",
        "4",
        "--seed",
        "3",
    ]);
    let text = stdout(&out);
    assert!(
        out.status.success(),
        "validate failed;\nstdout:\n{text}\nstderr:\n{}",
        stderr(&out)
    );
    assert!(text.contains("all oracle checks passed"));
    assert!(!text.contains("FAIL"));
    // Every oracle family shows up in the report.
    for needle in [
        "closed-form vs linearized quadrature",
        "overall error factorization",
        "analytic vs simulated age at lambda = 22",
        "queueing oracle: mean service time",
        "queueing oracle: mean waiting time",
        "fading oracle: round failure rate",
    ] {
        assert!(text.contains(needle), "missing check `{needle}` in:\n{text}");
    }
}

#[test]
fn help_lists_subcommands() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in ["analyze", "simulate", "sweep", "validate"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn sweep_refine_reports_optimum() {
    let out = run(&[
        "sweep",
        "--param",
        "lambda",
        "--refine",
        "15:30:0.001",
        "--out",
        Path::new(&std::env::temp_dir())
            .join("relay_aoi_refine.csv")
            .to_str()
            .unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("refined optimum"), "stderr: {err}");
    assert!(err.contains("golden-section"), "stderr: {err}");
}
