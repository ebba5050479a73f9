use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn idestab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idestab")).args(args).output().expect("runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_string_lossy().into_owned()
}

fn manifest(dir: &Path, stem: &str, sub: &str) -> serde_json::Value {
    let p: PathBuf = dir.join(format!("{stem}_{sub}.manifest.json"));
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn zero_kernel_test_is_consistent_with_stability() {
    let dir = tempfile::tempdir().unwrap();
    let out = idestab(&["test", &config("zero.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("zero_test.json")).unwrap()).unwrap();
    assert_eq!(json["verdict"]["outcome"]["kind"], "consistent_with_stability");
    assert_eq!(json["verdict"]["outcome"]["r_max"], 8);
    let m = manifest(dir.path(), "zero", "test");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn singular_kernel_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = idestab(&["test", &config("scalar_singular.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular"));
    assert_eq!(manifest(dir.path(), "singular", "test")["status"], "error");
}

#[test]
fn unstable_kernel_reports_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = idestab(&[
        "test",
        &config("scalar_unstable.toml"),
        "--segments",
        "60",
        "--format",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("unstable_test.json")).unwrap()).unwrap();
    assert_eq!(json["verdict"]["outcome"]["kind"], "certified_unstable");
    let w = &json["witness"];
    let (q, v) = (w["quadratic"].as_f64().unwrap(), w["quadrature"].as_f64().unwrap());
    assert!(q < 0.0 && ((q - v) / q).abs() < 1e-2, "{q} {v}");
    assert!(!dir.path().join("unstable_test.csv").exists());
}

#[test]
fn config_errors_exit_with_two_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[kernel]\nh = 1.0\nmatrix = 0.5\n\n[numerics]\nsegments = -3\n").unwrap();
    let out = idestab(&["test", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 6") && err.contains("numerics.segments"), "{err}");

    let out = idestab(&["test", &config("zero.toml"), "--delta", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = idestab(&["scan", &config("zero.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = idestab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_turns_inconclusive_into_failure() {
    let dir = tempfile::tempdir().unwrap();
    // a huge positive band puts the r = 2 eigenvalue inside it
    let cfg = dir.path().join("band.toml");
    fs::write(&cfg, "[kernel]\nh = 1.0\nmatrix = 0.5\n[numerics]\nsegments = 40\ntol_pos = 10.0\n[schedule]\nr = [2]\n")
        .unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(idestab(&["test", cfg.to_str().unwrap(), "--out", d]).status.code(), Some(0));
    assert_eq!(idestab(&["test", cfg.to_str().unwrap(), "--out", d, "--strict"]).status.code(), Some(1));
}

#[test]
fn small_scan_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = idestab(&["scan", &config("example1.toml"), "--grid-n", "4", "--r-max", "3", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("example1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(csv.starts_with("i1,i2,p1,p2,verdict,exclusion_r,min_eig_r2,min_eig_r3,oracle"));
    assert!(dir.path().join("example1.svg").exists());
    assert!(dir.path().join("example1_boundary.csv").exists());
    let m = manifest(dir.path(), "example1", "scan");
    assert_eq!(m["overrides"]["grid_n"], 4);

    // same config and seed, same bytes
    let dir2 = tempfile::tempdir().unwrap();
    let d2 = dir2.path().to_str().unwrap();
    idestab(&["scan", &config("example1.toml"), "--grid-n", "4", "--r-max", "3", "--out", d2]);
    assert_eq!(csv, fs::read_to_string(dir2.path().join("example1.csv")).unwrap());
}

#[test]
fn every_subcommand_runs_on_the_stable_scalar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for sub in ["fundamental", "simulate", "lyapunov"] {
        let out = idestab(&[sub, &config("scalar_half.toml"), "--delta", "0.01", "--segments", "40", "--out", d]);
        assert_eq!(out.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(format!("half_{sub}.csv")).exists());
    }
    let out = idestab(&["boundary", &config("example1.toml"), "--out", d, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(dir.path().join("example1_boundary.csv")).unwrap().starts_with("curve,omega,p1,p2"));
}
