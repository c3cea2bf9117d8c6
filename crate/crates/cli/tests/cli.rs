use std::path::Path;
use std::process::{Command, Output};

fn fastdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastdiff")).args(args).output().expect("binary runs")
}

fn config_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

#[test]
fn params_prints_derived_constants() {
    let out = fastdiff(&["params", "--dim", "3", "--m", "0.2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // N - 2 - Nm = 0.4
    assert!((v["beta"].as_f64().unwrap() - 7.5).abs() < 1e-12);
    assert!((v["gamma"].as_f64().unwrap() + 2.5).abs() < 1e-12);
    assert!((v["c_star"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(v["regime"], "Integrable");
}

#[test]
fn unknown_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scenario]\nkind = \"yamabe\"\n[grid]\nrmaxx = 3\n").unwrap();
    let out = fastdiff(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.rmaxx"));
}

#[test]
fn supercritical_exponent_exits_with_two() {
    let out = fastdiff(&["params", "--dim", "3", "--m", "0.5"]);
    assert!(out.status.success(), "out of range is reported, not rejected");
    // N = 6 in that file, so m = 0.7 is past (N-2)/N
    let out = fastdiff(&["run", &config_path("appendix-onesided.toml"), "--override", "scenario.m=0.7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastdiff(&["selftest", "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("PASS barenblatt_pde_residual"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() >= 8);
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn run_from_config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastdiff(&[
        "run",
        &config_path("appendix-onesided.toml"),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "scenario.tau_span=4",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("aronson_benilan"), "{text}");
    assert!(dir.path().join("report.json").exists());
}
