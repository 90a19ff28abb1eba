use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bsch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsch")).args(args).current_dir(dir).output().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const SMALL: &str = r#"
seed = 3
[geometry]
level = 1
[run]
t_end = 0.1
record_every = 2
checkpoint_every = 4
[scheme]
dt = 0.01
"#;

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    for out in ["a", "b"] {
        let o = bsch(&["simulate", "--config", "run.toml", "--preset", "rotating", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = ["samples.csv", "steps.csv", "summary.json", "final.ckpt", "config.toml", "manifest.json", "checkpoints/step_00000004.ckpt"];
    for name in names {
        assert_eq!(read(tmp.path().join("a").join(name)), read(tmp.path().join("b").join(name)), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path().join("a/manifest.json"))).unwrap();
    assert_eq!(manifest["csv_schema_version"], 1);
    assert_eq!(manifest["mesh_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["files"]["samples.csv"].is_string());
    let header = read(tmp.path().join("a/samples.csv")).lines().next().unwrap().to_string();
    assert!(header.starts_with("t,step,energy,"));

    // a different seed changes the data but not the layout
    let o = bsch(&["simulate", "--config", "run.toml", "--preset", "rotating", "--out", "c", "--seed", "4"], tmp.path());
    assert!(o.status.success());
    assert_ne!(read(tmp.path().join("a/samples.csv")), read(tmp.path().join("c/samples.csv")));
    assert!(read(tmp.path().join("c/samples.csv")).starts_with(&header));
}

#[test]
fn admissibility_violation_names_the_rule() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[params]\nbeta = 2.0\nm = 0.6\n").unwrap();
    let o = bsch(&["simulate", "--config", "bad.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_str(&read(tmp.path().join("o/error.json"))).unwrap();
    assert_eq!(rec["kind"], "config");
    assert_eq!(rec["issues"][0]["rule"], "D1");
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[scheme]\nstep = 0.1\n").unwrap();
    let o = bsch(&["simulate", "--config", "bad.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_str(&String::from_utf8_lossy(&o.stderr)).unwrap();
    assert!(rec["issues"][0]["path"].as_str().unwrap().starts_with("scheme"));
}

#[test]
fn runtime_failures_leave_an_error_record() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("ck.toml"), "[initial]\nkind = \"checkpoint\"\npath = \"missing.ckpt\"\n[geometry]\nlevel = 1\n").unwrap();
    let o = bsch(&["simulate", "--config", "ck.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_str(&read(tmp.path().join("o/error.json"))).unwrap();
    assert_eq!(rec["kind"], "runtime");
    assert!(rec["message"].as_str().unwrap().contains("missing.ckpt"));
}

#[test]
fn checkpoints_restart_runs() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    assert!(bsch(&["simulate", "--config", "run.toml", "--out", "a"], tmp.path()).status.success());
    let restart = "[initial]\nkind = \"checkpoint\"\npath = \"a/final.ckpt\"\n[geometry]\nlevel = 1\n[run]\nt_end = 0.05\n[scheme]\ndt = 0.01\n";
    std::fs::write(tmp.path().join("restart.toml"), restart).unwrap();
    let o = bsch(&["simulate", "--config", "restart.toml", "--out", "b"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stationary_mesh_and_certify_verbs() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("s.toml"), "[geometry]\nlevel = 1\n[initial]\namplitude = 0.001\n").unwrap();
    let o = bsch(&["stationary", "--config", "s.toml", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&read(tmp.path().join("s/stationary.json"))).unwrap();
    assert!(s["solution"]["residual"].as_f64().unwrap() <= 1e-10);

    assert!(bsch(&["mesh-export", "--config", "s.toml", "--out", "m"], tmp.path()).status.success());
    let vtk = read(tmp.path().join("m/mesh.vtk"));
    assert!(vtk.starts_with("# vtk DataFile") && vtk.contains("POINTS 61 double"));

    let o = bsch(&["certify", "--only", "7", "--out", "c"], tmp.path());
    assert!(o.status.success());
    let c: serde_json::Value = serde_json::from_str(&read(tmp.path().join("c/certify.json"))).unwrap();
    assert_eq!(c[0]["passed"], true);
}

#[test]
fn small_pullback_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[geometry]\nlevel = 1\n[scheme]\ndt = 0.05\n[pullback]\nt_fixed = 2.0\noffsets = [0.5, 1.0, 2.0]\nmembers = 2\n";
    std::fs::write(tmp.path().join("p.toml"), cfg).unwrap();
    let o = bsch(&["pullback", "--config", "p.toml", "--preset", "pullback", "--out", "p"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(tmp.path().join("p/pullback.csv")).lines().count(), 1 + 3 * 2);
}
