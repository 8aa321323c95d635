use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuzzydid")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn assert_valid(report: &Value) {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json")).unwrap())
            .unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errs: Vec<String> = v.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errs.is_empty(), "{errs:#?}");
}

fn estimate_of<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["estimates"].as_array().unwrap().iter().find(|e| e["estimator"] == name).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Draws a dataset from a design file into `dir`.
fn simulated(cfg: &str, dir: &Path) -> PathBuf {
    let out = dir.join("data.csv");
    let o = run(&["simulate", "--config", path_str(&data(cfg)), "--reps", "0", "--write-data", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn toy16_hand_values() {
    let toy = data("toy16.csv");
    let o = run(&["estimate", "--input", path_str(&toy), "--estimator", "all", "--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    for (name, want) in [("did", 28.0), ("tc", 29.0), ("cic", 30.0)] {
        let got = estimate_of(&r, name)["point"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{name}: {got}");
        assert_eq!(estimate_of(&r, name)["se_source"], "influence");
    }
    assert_eq!(r["design"]["two_group"]["stable_control"], true);
    assert_eq!(r["run"]["command"], "estimate");
    assert_eq!(r["run"]["inference"]["bootstrap"], 0);
}

#[test]
fn unstable_control_routes_to_bounds() {
    let o = run(&["estimate", "--input", path_str(&data("toy16_unstable.csv")), "--estimator", "tc", "--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("use `bounds`"), "{err}");
    assert!(err.contains("module: estimators"), "{err}");
    let r = json(&o);
    assert_eq!(r["errors"][0]["code"], "unstable_control");
}

#[test]
fn unstable_toy_bounds() {
    let o = run(&["bounds", "--input", path_str(&data("toy16_unstable.csv")), "--bootstrap", "0", "--quantiles", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    let b = &r["bounds"];
    assert_eq!(b[0]["method"], "tc");
    assert_eq!((b[0]["lower"].as_f64(), b[0]["upper"].as_f64()), (Some(15.75), Some(32.25)));
    assert_eq!(b[1]["method"], "cic");
    assert_eq!(b[1]["quantiles"][0]["q"], 0.5);
}

#[test]
fn stable_toy_bounds_collapse() {
    let o = run(&["bounds", "--input", path_str(&data("toy16.csv")), "--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["bounds"][0]["lower"], 29.0);
    assert_eq!(r["bounds"][1]["upper"], 30.0);
    assert_eq!(r["bounds"][1]["collapsed"], true);
}

#[test]
fn unbounded_support_writes_infinities_as_strings() {
    let o = run(&["bounds", "--input", path_str(&data("toy16_unstable.csv")), "--estimator", "tc", "--bootstrap", "0", "--support", "-inf,inf"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    assert_eq!(r["bounds"][0]["lower"], "-inf");
    assert_eq!(r["bounds"][0]["upper"], "inf");
}

#[test]
fn simulate_reports_monte_carlo() {
    let o = run(&["simulate", "--config", path_str(&data("dgp.cfg")), "--reps", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    let mc = &r["mc"];
    assert_eq!(mc["reps"], 20);
    assert_eq!(mc["config"]["n"], 2000);
    let names: Vec<&str> = mc["estimators"].as_array().unwrap().iter().map(|s| s["estimator"].as_str().unwrap()).collect();
    assert_eq!(names, ["did", "tc", "cic"]);
    for s in mc["estimators"].as_array().unwrap() {
        assert_eq!(s["truth"], 1.0);
        assert!(s["bias"].as_f64().unwrap().abs() < 0.3);
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let toy = data("toy16.csv");
    let args = ["estimate", "--input", path_str(&toy), "--bootstrap", "99", "--seed", "5"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(a.stdout, b.stdout);
    let cfg = data("dgp.cfg");
    let args = ["simulate", "--config", path_str(&cfg), "--reps", "10", "--bootstrap", "20"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let other = run(&["simulate", "--config", path_str(&cfg), "--reps", "10", "--bootstrap", "20", "--seed", "8"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn output_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let toy = data("toy16.csv");
    let a = run(&["estimate", "--input", path_str(&toy), "--bootstrap", "0"]);
    let b = run(&["estimate", "--input", path_str(&toy), "--bootstrap", "0", "--output", path_str(&out)]);
    assert!(b.status.success());
    assert!(b.stdout.is_empty());
    let mut want: Value = json(&a);
    let mut got: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    // Only the recorded --output differs.
    want["run"]["out"]["output"] = Value::Null;
    got["run"]["out"]["output"] = Value::Null;
    assert_eq!(want, got);
}

#[test]
fn table_format() {
    let o = run(&["estimate", "--input", path_str(&data("toy16.csv")), "--bootstrap", "0", "--format", "table"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("stable control: yes"));
    for line in ["did", "tc", "cic"] {
        let row = text.lines().find(|l| l.trim_start().starts_with(line)).unwrap();
        assert!(row.contains(".0000"), "{row}");
    }
}

#[test]
fn usage_and_input_errors_exit_1() {
    assert_eq!(run(&["estimate"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--input", "x.csv", "--estimator", "wald"]).status.code(), Some(1));
    let missing = run(&["estimate", "--input", "/nonexistent/file.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("module: dataset"));
    let col = run(&["estimate", "--input", path_str(&data("toy16.csv")), "--y", "wage"]);
    assert_eq!(col.status.code(), Some(1));
    assert!(stderr(&col).contains("--y/--d/--g/--t"));
    let level = run(&["estimate", "--input", path_str(&data("toy16.csv")), "--level", "1.5"]);
    assert_eq!(level.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn many_groups_need_supergroups() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated("multigroup.cfg", dir.path());
    let o = run(&["estimate", "--input", path_str(&csv), "--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--supergroups"));
}

#[test]
fn classify_then_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated("multigroup.cfg", dir.path());
    let map = dir.path().join("map.csv");
    let o = run(&["classify", "--input", path_str(&csv), "--write-map", path_str(&map)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    let labels: Vec<i64> = (0..5).map(|g| r["supergroups"]["map"]["groups"][g.to_string()]["label"].as_i64().unwrap()).collect();
    assert_eq!(labels, [0, 0, 1, 1, -1]);
    assert_eq!(r["design"]["used_periods"], serde_json::json!([1, 2]));

    let auto = run(&["estimate", "--input", path_str(&csv), "--supergroups", "auto", "--bootstrap", "0", "--estimator", "did"]);
    assert_eq!(auto.status.code(), Some(0), "{}", stderr(&auto));
    let ra = json(&auto);
    assert_valid(&ra);
    let from_file = run(&["estimate", "--input", path_str(&csv), "--supergroups", path_str(&map), "--bootstrap", "0", "--estimator", "did"]);
    let rf = json(&from_file);
    assert_eq!(ra["estimates"][0]["point"], rf["estimates"][0]["point"]);
    let agg = &ra["estimates"][0]["aggregate"];
    let w10 = agg["w10"].as_f64().unwrap();
    assert!(w10 > 0.0 && w10 < 1.0);
    assert!((ra["estimates"][0]["point"].as_f64().unwrap() - 1.0).abs() < 0.5);
}

#[test]
fn split_sample_classification() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated("multigroup.cfg", dir.path());
    let o = run(&["estimate", "--input", path_str(&csv), "--supergroups", "auto", "--split-sample", "--bootstrap", "0", "--estimator", "did"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    assert_eq!(r["supergroups"]["split_sample"], true);
    let c = json(&run(&["classify", "--input", path_str(&csv), "--split-sample"]));
    assert!(c["supergroups"]["disagreements"].is_array());
}

#[test]
fn placebo_on_pre_periods() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated("placebo.cfg", dir.path());
    let o = run(&["placebo", "--input", path_str(&csv), "--bootstrap", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    let p = &r["placebo"];
    assert_eq!(p["pair"], serde_json::json!([0, 1]));
    assert_eq!(p["informative"], true);
    for t in p["tests"].as_array().unwrap() {
        // No effect and no moving treatment before the last period.
        assert!(t["t_stat"].as_f64().unwrap().abs() < 3.0, "{t}");
    }
    let bad = run(&["placebo", "--input", path_str(&csv), "--placebo-pair", "0,9"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("--placebo-pair"));
}

#[test]
fn quantile_effects_on_toy() {
    let o = run(&["estimate", "--input", path_str(&data("toy16.csv")), "--estimator", "cic", "--quantiles", "0.5", "--bootstrap", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&o);
    assert_valid(&r);
    assert_eq!(estimate_of(&r, "lqte(0.5)")["point"], 23.0);
}
