use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BUBBLE: &str = r#"{"data":{"kind":"generators","terms":[{"factors":["bubble"]}]},"eps":[1e-2],"d":[2,3]}"#;

fn tsolve(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsolve"))
        .args(args)
        .current_dir(dir)
        .env_remove("TSOLVE_THREADS")
        .output()
        .expect("spawn tsolve")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("JSON output")
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn missing_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"data":{"kind":"generators","terms":[{"factors":["bubble"]}]},"eps":[1e-2]}"#,
    )
    .unwrap();
    let out = tsolve(&["scheme-exp", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = json(&out.stderr);
    assert_eq!(err["schema"], 1);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["field"], "d");
}

#[test]
fn invalid_value_names_its_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"data":{"kind":"generators","terms":[{"factors":["bubble"]}]},"eps":[2.0],"d":[2]}"#,
    )
    .unwrap();
    let out = tsolve(&["spectral-solve", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["field"], "eps[0]");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["kind"], "usage");
    let out = tsolve(&["scheme-exp"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["field"], "config");
}

#[test]
fn help_prints_normally() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["--help"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("bench-dims"));
}

#[test]
fn bench_dims_writes_one_row_per_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["bench-dims", "--d", "2,4,8", "--eps", "1e-2", "--csv", "b.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("b.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["d", "r", "R", "N", "rank", "params", "work", "h1_error"]
    );
    let dims: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(dims, ["2", "4", "8"]);
    let report = json(&out.stdout);
    assert_eq!(report["command"], "bench-dims");
    assert_eq!(report["results"]["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_dims_without_outputs_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["bench-dims", "--d", "2"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("d,r,R,N,rank,params,work,h1_error\n2,"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn validate_contour_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["validate", "--suite", "contour"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS criterion 4"));
    let report = json(&out.stdout);
    assert_eq!(report["results"]["passed"], true);
    assert_eq!(report["results"]["suite"], "contour");
}

#[test]
fn reports_are_deterministic_apart_from_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), BUBBLE).unwrap();
    let run = |threads: &str| {
        let out = tsolve(&["scheme-exp", "--config", "c.json", "--threads", threads], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        without_timestamp(json(&out.stdout))
    };
    let first = run("1");
    assert_eq!(first, run("1"));
    assert_eq!(first, run("4"));
    assert_eq!(first["schema"], 1);
    assert_eq!(first["results"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn report_and_csv_go_to_the_requested_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), BUBBLE).unwrap();
    let out = tsolve(
        &["spectral-solve", "--config", "c.json", "--out", "r.json", "--csv", "r.csv", "--seed", "7"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report = json(&std::fs::read(dir.path().join("r.json")).unwrap());
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["d"], serde_json::json!([2, 3]));
    let rows = csv::Reader::from_path(dir.path().join("r.csv")).unwrap().records().count();
    assert_eq!(rows, 2);
}

#[test]
fn expsum_reports_requested_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsolve(&["expsum", "--r", "3,5", "--clip"], dir.path());
    assert!(out.status.success());
    let report = json(&out.stdout);
    let sums = report["results"]["sums"].as_array().unwrap();
    assert_eq!(sums.len(), 2);
    assert_eq!(sums[1]["r"], 5);
    assert_eq!(sums[1]["sum"]["clipped"], true);
}
