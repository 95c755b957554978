use std::path::Path;
use std::process::{Command, Output};

use cvvpro::game::{generate_instance, run_simulation, LearnerKind, SimulationConfig};
use cvvpro::metrics::{emitted_rows, parse_json, to_csv, to_json, CSV_HEADER};

fn cvvpro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvvpro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate(out: &Path, format: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate", "--learner", "cvvpro", "--n", "12", "--m", "3", "--T", "150",
        "--capacity", "1.3", "--instance-seed", "2", "--run-seed", "5",
        "--format", format, "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cvvpro(&args)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn json_round_trip_preserves_every_field() {
    let instance = generate_instance(15, 3, 1.3, 3).unwrap();
    let log = run_simulation(&instance, &SimulationConfig::experiment(LearnerKind::Cvvpro, &instance, 200, 3))
        .unwrap();
    let (back, rows) = parse_json(&to_json(&log)).unwrap();
    assert_eq!(back.metadata, log.metadata);
    assert_eq!(back.records.len(), log.records.len());
    for (a, b) in back.records.iter().zip(&log.records) {
        for (u, w) in a.step.x.iter().zip(&b.step.x).chain(a.step.v.iter().zip(&b.step.v)) {
            assert!(close(*u, *w));
        }
        assert!(close(a.step.cost, b.step.cost) && close(a.max_violation, b.max_violation));
        assert_eq!(a.y, b.y);
    }
    for (a, b) in rows.iter().zip(emitted_rows(&log)) {
        assert!(close(a.velocity_norm, b.velocity_norm));
        assert_eq!(a.regret.is_some(), b.regret.is_some());
        if let (Some(p), Some(q)) = (a.regret, b.regret) {
            assert!(close(p, q));
        }
    }
    assert_eq!(to_csv(&back), to_csv(&log));
}

#[test]
fn simulate_output_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let a = dir.path().join(format!("a.{format}"));
        let b = dir.path().join(format!("b.{format}"));
        assert!(simulate(&a, format, &[]).status.success());
        assert!(simulate(&b, format, &[]).status.success());
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 150);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(simulate(&out, "xml", &[]).status.code(), Some(1));
    assert_eq!(simulate(&out, "csv", &["--d-offset", "7"]).status.code(), Some(1));
    assert_eq!(simulate(&out, "csv", &["--alpha", "-1"]).status.code(), Some(1));
    assert_eq!(cvvpro(&["bogus"]).status.code(), Some(1));
    assert_eq!(cvvpro(&["--help"]).status.code(), Some(0));
}

#[test]
fn selftest_exits_zero() {
    let out = cvvpro(&["qp-selftest", "--instances", "200", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 mismatches"));
}

#[test]
fn diagnose_reports_and_exits_by_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.json");
    assert!(simulate(&log, "json", &[]).status.success());
    let report = dir.path().join("report.json");
    let out = cvvpro(&[
        "diagnose", "--log", log.to_str().unwrap(), "--checks", "claim1,lemma2",
        "--samples", "10", "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"claim1\""));
    let bad = cvvpro(&[
        "diagnose", "--log", log.to_str().unwrap(), "--checks", "nonsense",
        "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn compare_writes_paired_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvvpro(&[
        "compare", "--T", "100", "--n", "15", "--m", "3", "--seeds", "1,2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["seed1_cvvpro.csv", "seed1_ogd.csv", "seed2_ogd.csv", "summary.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
