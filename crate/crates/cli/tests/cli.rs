use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const D6_CSV: &str = "s,a,y\n1,1,10\n1,1,14\n1,0,6\n1,0,8\n0,,\n0,,\n";

fn transport(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transport"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn d6_config(dir: &Path, extra: &str) -> String {
    let data = write(dir, "d6.csv", D6_CSV);
    let out = dir.join("out");
    write(
        dir,
        "config.json",
        &format!(
            r#"{{
  "data": {{"path": "{data}"}},
  "models": {{
    "participation": {{"covariates": []}},
    "treatment": {{"estimated": {{"covariates": []}}}},
    "outcome": {{"covariates": []}}
  }},
  "output": {{"dir": "{}"}}{extra}
}}"#,
            out.display()
        ),
    )
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(Result::unwrap).collect()
}

#[test]
fn estimate_on_d6() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = d6_config(dir.path(), "");
    let out = transport(&["estimate", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/estimates.csv"));
    assert_eq!(rows.len(), 6 * 3);
    for row in rows {
        let expected = match &row[2] {
            "MeanA1" => 12.0,
            "MeanA0" => 7.0,
            _ => 5.0,
        };
        let got: f64 = row[5].parse().unwrap();
        assert!((got - expected).abs() < 1e-12, "{row:?}");
    }
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/estimates.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "estimate");
    assert_eq!(json["rows"].as_array().unwrap().len(), 18);
}

#[test]
fn estimate_single_cell_shift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = d6_config(dir.path(), "");
    let out = transport(&["estimate", "--config", &cfg, "--u0", "-2", "--delta", "5"]);
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("out/estimates.csv"));
    let ate: Vec<f64> = rows.iter().filter(|r| &r[2] == "ATE").map(|r| r[5].parse().unwrap()).collect();
    assert!(ate.iter().all(|v| (v - 0.0).abs() < 1e-12), "{ate:?}");
}

#[test]
fn whole_population_needs_nested_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = d6_config(dir.path(), r#", "target": "whole_population""#);
    let out = transport(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nested design"), "{err}");
    assert!(!dir.path().join("out").exists());

    let cfg = d6_config(dir.path(), r#", "target": "whole_population", "design": "nested""#);
    let out = transport(&["estimate", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_data_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "s,a,y\n1,2,3\n0,,\n");
    let out = transport(&["estimate", "--data", &data, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [data]"));
}

#[test]
fn separation_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    // x perfectly separates participants from non-participants.
    let mut csv = String::from("s,a,y,x\n");
    for i in 0..10 {
        csv.push_str(&format!("1,{},{},{}\n", i % 2, i, 1.0 + i as f64));
        csv.push_str(&format!("0,,,{}\n", -1.0 - i as f64));
    }
    let data = write(dir.path(), "sep.csv", &csv);
    let out = transport(&["estimate", "--data", &data, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_config_field_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = d6_config(dir.path(), r#", "estimatorz": ["OM"]"#);
    let out = transport(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}

fn simulation_config(dir: &Path, n: usize, participation: &str) -> String {
    write(
        dir,
        "sim.json",
        &format!(
            r#"{{
  "simulation": {{
    "n": {n},
    "covariates": [{{"name": "x1", "kind": "normal", "mean": 0, "sd": 1}},
                   {{"name": "x2", "kind": "bernoulli", "p": 0.4}}],
    "participation": {participation},
    "treatment_probability": 0.5,
    "outcome_treated": {{"intercept": 3, "coefficients": [2, 1]}},
    "outcome_control": {{"intercept": 2, "coefficients": [0.5, 1]}},
    "noise_sd": 1,
    "violation": {{"treated": 3, "control": -2}},
    "seed": 5
  }}
}}"#
        ),
    )
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulation_config(dir.path(), 300, r#"{"intercept": 0.2, "coefficients": [0.8, -0.6]}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = transport(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("data.csv")).unwrap(), std::fs::read(b.join("data.csv")).unwrap());
    let truths: Value = serde_json::from_slice(&std::fs::read(a.join("truths.json")).unwrap()).unwrap();
    let gap = truths["truths"]["target_gap"]["treated"].as_f64().unwrap();
    assert!((gap - 3.0).abs() < 1e-9);

    let c = dir.path().join("c");
    let o = transport(&["simulate", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("data.csv")).unwrap(), std::fs::read(c.join("data.csv")).unwrap());
}

#[test]
fn check_positivity_flags_near_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d6 = d6_config(dir.path(), "");
    let o = transport(&["check-positivity", "--config", &d6]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/positivity.json")).unwrap()).unwrap();
    assert_eq!(report["flagged_rows"].as_array().unwrap().len(), 0);

    let cfg = simulation_config(dir.path(), 2000, r#"{"intercept": 0, "coefficients": [4, 0]}"#);
    let sim = dir.path().join("sim");
    assert!(transport(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()]).status.success());
    let data = sim.join("data.csv");
    let o = transport(&[
        "check-positivity",
        "--data",
        data.to_str().unwrap(),
        "--threshold",
        "0.01",
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(sim.join("positivity.json")).unwrap()).unwrap();
    assert!(!report["flagged_rows"].as_array().unwrap().is_empty());
}

#[test]
fn bootstrap_flag_switches_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulation_config(dir.path(), 400, r#"{"intercept": 0.2, "coefficients": [0.8, -0.6]}"#);
    let sim = dir.path().join("sim");
    assert!(transport(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()]).status.success());
    let data = sim.join("data.csv");
    let out = dir.path().join("est");
    let o = transport(&[
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--bootstrap",
        "50",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("estimates.csv"));
    assert!(rows.iter().all(|r| &r[9] == "bootstrap" && !r[6].is_empty()));
}
