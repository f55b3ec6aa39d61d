use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn likadj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_likadj")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(args: &[&str]) -> Value {
    let o = likadj(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(&o)).unwrap()
}

/// Lines of a CSV output after the config and note comments.
fn csv_body(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn table1_golden() {
    let o = likadj(&["table", "--table", "1", "--format", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("# config: {"));
    assert_eq!(
        csv_body(&out),
        ["case,2,5,10,20,50", "a,2.25,9.00,20.25,42.75,110.25", "b,-2.10,-5.50,-8.56,-15.76,-130.28"]
    );
}

#[test]
fn table2_golden() {
    let out = stdout(&likadj(&["table", "--table", "2", "--format", "csv"]));
    assert_eq!(
        csv_body(&out),
        ["case,1,2,5,10,20,50", "a,1.11,2.45,6.77,14.17,29.09,74.01", "b,1.11,2.21,5.53,11.05,22.11,55.26"]
    );
}

#[test]
fn precise_table_keeps_digits() {
    let out = stdout(&likadj(&["table", "--table", "1", "--precise", "--format", "csv"]));
    let b = csv_body(&out)[2].split(',').nth(5).unwrap().parse::<f64>().unwrap();
    assert!((b + 130.2849).abs() < 1e-3);
    assert!(b.to_string().len() > 8);
}

#[test]
fn adjust_normal_regression_constants() {
    let doc = json(&["adjust", "--model", "normal-regression", "--n", "18", "--q", "4"]);
    let r = &doc["result"];
    let rn = 18f64.sqrt();
    assert!((r["g_inf"].as_f64().unwrap() * rn - 2f64.sqrt() / 3.0).abs() < 1e-9);
    assert!((r["g_np"].as_f64().unwrap() * rn - 4.0 / 2f64.sqrt()).abs() < 1e-9);
    assert_eq!(r["provenance"], "analytic");
    assert_eq!(doc["config"]["model"], "normal-regression");
}

#[test]
fn adjust_finite_difference_provider_agrees() {
    let a = json(&["adjust", "--model", "inverse-gaussian", "--q", "3"]);
    let f = json(&["adjust", "--model", "inverse-gaussian", "--q", "3", "--provider", "fd"]);
    for key in ["g_inf", "g_np"] {
        let (x, y) = (a["result"][key].as_f64().unwrap(), f["result"][key].as_f64().unwrap());
        assert!((x - y).abs() < 1e-6, "{key}: {x} vs {y}");
    }
}

#[test]
fn bartlett_parts_sum() {
    let doc = json(&["bartlett", "--model", "normal-regression", "--q", "4", "--n", "10"]);
    let r = &doc["result"];
    let (b, bi, bn) = (r["b"].as_f64().unwrap(), r["b_inf"].as_f64().unwrap(), r["b_np"].as_f64().unwrap());
    assert!((b - bi - bn).abs() < 1e-12);
    assert!((bi - 1.0 / 30.0).abs() < 1e-12);
    assert!((bn - r["b_np_explicit"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn pivots_single_kind() {
    let out = stdout(&likadj(&["pivots", "--model", "inverse-gaussian", "--kind", "wald-obs", "--format", "csv"]));
    let body = csv_body(&out);
    assert_eq!(body[0], "pivot_kind,kappa1,kappa3");
    assert_eq!(body.len(), 2);
    assert!(body[1].starts_with("wald-obs,"));
}

#[test]
fn config_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let first = likadj(&["adjust", "--model", "neyman-scott", "--n", "7", "--q", "3", "--seed", "5"]);
    let doc: Value = serde_json::from_slice(&first.stdout).unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, serde_json::to_string(&doc["config"]).unwrap()).unwrap();
    let second = likadj(&["adjust", "--config", cfg.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "neyman-scott", "model_config": {"n": 4, "q": 2, "sigma": 2.0}}"#).unwrap();
    let doc = json(&["adjust", "--config", cfg.to_str().unwrap(), "--n", "9"]);
    assert_eq!(doc["config"]["model_config"]["n"], 9);
    assert_eq!(doc["config"]["model_config"]["sigma"], 2.0);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let o = likadj(&["table", "--table", "2", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().contains("a,1.11,2.45"));
}

#[test]
fn bootstrap_with_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.csv");
    std::fs::write(&data, "0.3,1.9\n-0.8,2.4\n1.1,0.7\n0.2,2.2\n").unwrap();
    let o = likadj(&[
        "bootstrap", "--model", "neyman-scott", "--n", "4", "--q", "2", "--psi0", "0.9", "--reps", "300", "--format", "csv",
        "--data", data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().nth(1).unwrap().starts_with("# observed_r="));
    let body = csv_body(&out);
    assert!(body[0].starts_with("pivot,count,mean,se,skewness,ks"));
    assert!(body[1].starts_with("r,300,"));
}

#[test]
fn bootstrap_is_reproducible() {
    let args = ["bootstrap", "--model", "inverse-gaussian", "--n", "6", "--q", "2", "--reps", "200", "--seed", "9"];
    let a = likadj(&args);
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "2"]);
    let b = likadj(&with_workers);
    let strip = |o: &Output| {
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v["config"]["workers"] = Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn verify_reports_verdict() {
    let doc = json(&["verify", "--model", "neyman-scott", "--n", "10", "--q", "2", "--reps", "500", "--quantity", "er"]);
    let text = doc["result"].to_string();
    assert!(text.contains("inconclusive") || text.contains("pass"), "{text}");
}

#[test]
fn unknown_model_exits_2() {
    let o = likadj(&["adjust", "--model", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown model"));
}

#[test]
fn unknown_config_field_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "neyman-scott", "model_config": {"n": 4, "sgima": 1.0}}"#).unwrap();
    let o = likadj(&["adjust", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sgima"));
}

#[test]
fn command_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"command": "table", "table": 1}"#).unwrap();
    assert_eq!(likadj(&["adjust", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn mc_provider_needs_reps() {
    assert_eq!(likadj(&["adjust", "--model", "neyman-scott", "--provider", "mc", "--reps", "10"]).status.code(), Some(2));
}

#[test]
fn degenerate_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.csv");
    std::fs::write(&data, "1\n1\n1\n1\n1\n").unwrap();
    let o = likadj(&["pivots", "--model", "normal-regression", "--n", "5", "--q", "1", "--psi0", "1", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn validation_failure_exits_4_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "inverse-gaussian", "reps": 1000, "tolerances": {"fd_rel": 1e-30}}"#).unwrap();
    let o = likadj(&["validate", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("fd-ddlam2"));
}

#[test]
fn validate_passes_with_defaults() {
    let o = likadj(&["validate", "--model", "curved-normal", "--reps", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["result"]["pass"], true);
}

#[test]
fn csv_config_line_parses_back() {
    let out = stdout(&likadj(&["bartlett", "--model", "behrens-fisher", "--format", "csv"]));
    let line = out.lines().next().unwrap().strip_prefix("# config: ").unwrap();
    let cfg: Value = serde_json::from_str(line).unwrap();
    assert_eq!(cfg["command"], "bartlett");
    assert!(Path::new(env!("CARGO_BIN_EXE_likadj")).exists());
}
