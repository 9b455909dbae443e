use std::path::Path;
use std::process::{Command, Output};

fn mfglab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .args(args)
        .current_dir(dir)
        .env_remove("MFG_LAB_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn selftest_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    let out = mfglab(&["selftest", "--output-dir", "st"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&d.path().join("st"));
    assert_eq!(m["status"], "ok");
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn schema_violation_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "bad.json", r#"{"grid": {"N": 16}, "gird": 1}"#);
    let out = mfglab(&["simulate", "--config", &cfg], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gird"));
}

#[test]
fn mismatched_command_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", r#"{"command": "selftest"}"#);
    assert_eq!(mfglab(&["simulate", "--config", &cfg], d.path()).status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .args(["selftest"])
        .current_dir(d.path())
        .env("MFG_LAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn capacity_guard_exits_four_with_manifest() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "big.json", r#"{"grid": {"N": 4096, "K": 14}, "tree": {"recombining": false}}"#);
    let out = mfglab(&["simulate", "--config", &cfg, "--output-dir", "big"], d.path());
    assert_eq!(out.status.code(), Some(4));
    let m = manifest(&d.path().join("big"));
    assert!(m["failure"].as_str().unwrap().contains("capacity"));
}

#[test]
fn invert_source_flags_reach_the_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "inv.json", r#"{"grid": {"N": 16, "K": 8}, "inversion": {"certificate": false}}"#);
    let args = [
        "invert-source",
        "--config",
        &cfg,
        "--seed",
        "11",
        "--alpha",
        "1e-5",
        "--noise",
        "0.01",
        "--weight-mu",
        "2",
        "--eps",
        "0.1",
        "--max-iters",
        "40",
    ];
    let out = mfglab(&args, d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = d.path().join("runs/invert-source-11");
    let m = manifest(&dir);
    let inv = &m["config"]["inversion"];
    assert_eq!((inv["alpha"].as_f64(), inv["noise"].as_f64()), (Some(1e-5), Some(0.01)));
    assert_eq!((inv["weight_mu"].as_f64(), inv["eps"].as_f64(), inv["max_iters"].as_u64()), (Some(2.0), Some(0.1), Some(40)));
    for f in ["r_hat.fld", "r_hat.csv", "convergence.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn unknown_flag_exits_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(mfglab(&["simulate", "--alpha", "1"], d.path()).status.code(), Some(2));
}
