use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbc"))
        .args(args)
        .env_remove("WBC_OUT_DIR")
        .env_remove("WBC_SCENARIO_DIR")
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wbc-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn scenario_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn metrics(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn list_is_deterministic_and_complete() {
    let a = wbc(&["list"]);
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    for name in ["dpend", "cartpole", "fourbar-arm", "biped5", "squat", "bow", "fist-limit", "walk", "walk-push"] {
        assert!(text.lines().any(|l| l.trim() == name), "{name} missing");
    }
    assert_eq!(wbc(&["list"]).stdout, a.stdout);
    let empty = scratch("empty");
    let b = wbc(&["list", "--scenario-dir", empty.to_str().unwrap()]);
    assert!(b.status.success());
    assert_eq!(b.stdout, a.stdout);
}

#[test]
fn extra_scenario_dir_is_listed() {
    let dir = scratch("extra");
    std::fs::write(dir.join("mine.toml"), "").unwrap();
    std::fs::write(dir.join("notes.txt"), "").unwrap();
    let text = String::from_utf8(wbc(&["list", "--scenario-dir", dir.to_str().unwrap()]).stdout).unwrap();
    assert!(text.contains("mine.toml"));
    assert!(!text.contains("notes.txt"));
}

#[test]
fn fist_limit_run_passes_and_is_byte_identical() {
    let out = scratch("fist");
    let path = scenario_path("fist-limit");
    let a = wbc(&["run", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let m = metrics(&a);
    assert!(m["min_h"]["left"].as_f64().unwrap() >= -1e-3);
    assert!(m["min_h"]["right"].as_f64().unwrap() < 0.0);
    let csv_a = std::fs::read(out.join("fist-limit/trajectory.csv")).unwrap();
    assert!(out.join("fist-limit/metrics.json").is_file());

    let b = wbc(&["run", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("fist-limit/trajectory.csv")).unwrap(), csv_a);
}

#[test]
fn out_dir_defaults_to_environment() {
    let out = scratch("env");
    // Too short for the right arm to cross its limit, so the assertion exit is expected.
    let status = Command::new(env!("CARGO_BIN_EXE_wbc"))
        .args(["run", "fist-limit", "--set", "duration=0.05"])
        .env("WBC_OUT_DIR", &out)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(1));
    assert!(out.join("fist-limit/trajectory.csv").is_file());
}

#[test]
fn overrides_are_applied_and_recorded() {
    let out = scratch("push");
    let o = wbc(&["run", "walk-push", "--set", "ext_force.fy=-30", "--set", "duration=0.2", "--out", out.to_str().unwrap()]);
    let m = metrics(&o);
    let overrides: Vec<&str> = m["overrides"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(overrides, ["ext_force.fy=-30", "duration=0.2"]);
    assert_eq!(m["ticks"].as_u64(), Some(200));
}

#[test]
fn failed_assertion_exits_one() {
    let out = scratch("assert");
    let o = wbc(&["run", "fist-limit", "--set", "duration=0.1", "--set", "assertions.min_h.left=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("min_h.left"));
}

#[test]
fn schema_error_exits_two_with_line() {
    let dir = scratch("schema");
    let path = dir.join("bad.toml");
    std::fs::write(&path, "format = \"wbc-scenario\"\nversion = 1\nname = \"x\"\nmodel = \"dpend\"\nduration = \"long\"\n").unwrap();
    let o = wbc(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"));
    assert_eq!(wbc(&["run", "no-such-scenario"]).status.code(), Some(2));
    assert_eq!(wbc(&["run", "fist-limit", "--set", "no_such_key=1"]).status.code(), Some(2));
}

#[test]
fn runtime_fault_exits_three_with_truncated_log() {
    let out = scratch("fault");
    let o = wbc(&["run", "walk-push", "--set", "ext_force.fy=-600", "--set", "duration=4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let m = metrics(&o);
    assert!(m["fault"].is_string());
    let rows = std::fs::read_to_string(out.join("walk-push/trajectory.csv")).unwrap().lines().count() - 1;
    assert!(rows > 0 && rows < 4000);
    assert_eq!(rows as u64, m["ticks"].as_u64().unwrap());
}

#[test]
fn verify_selected_suites() {
    let o = wbc(&["verify", "theorem1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"][0]["suite"], "theorem1");
    assert_eq!(wbc(&["verify", "nope"]).status.code(), Some(2));
}
