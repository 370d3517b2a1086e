use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn barw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barw")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let h = barw(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(stdout(&h).contains("phase-diagram"));
    assert_eq!(barw(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(barw(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(barw(&["simulate", "--mu", "abc"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad_mu = barw(&["simulate", "--mu", "-1", "--out", out]);
    assert_eq!(bad_mu.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_mu.stderr).contains("error"));
    assert_eq!(barw(&["simulate", "--init", "sideways", "--out", out]).status.code(), Some(1));
}

#[test]
fn simulate_then_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = barw(&[
        "simulate",
        "--mu",
        "2",
        "--radius",
        "4",
        "--side",
        "200",
        "--generations",
        "40",
        "--seed",
        "3",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "counts.csv", "final.txt", "spacetime.pgm"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let b = dir.path().join("b");
    let r = barw(&["rerun", a.join("manifest.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).contains("rerun reproduces all"));
}

#[test]
fn tampered_manifest_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = barw(&["thresholds", "--r-range", "1-5", "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let path = a.join("manifest.json");
    let mut m = manifest_json(&a);
    m["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    let b = dir.path().join("b");
    let r = barw(&["rerun", path.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stdout(&r).contains("DIFFERS"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mu": 3.0, "radius": 2, "side": 150, "replicas": 7, "generations": 30}"#).unwrap();
    let out = dir.path().join("out");
    let o = barw(&["survival", "--config", cfg.to_str().unwrap(), "--radius", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest_json(&out);
    let exp = &m["config"]["experiment"];
    assert_eq!(exp["mu"], 3.0);
    assert_eq!(exp["radius"], 5);
    assert_eq!(exp["spec"]["replicas"], 7);
    fs::write(&cfg, r#"{"mew": 3.0}"#).unwrap();
    let bad = barw(&["survival", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ndjson_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o =
        barw(&["thresholds", "--r-range", "1-3", "--dim", "2", "--format", "ndjson", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("thresholds.ndjson")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["volume"], 9);
}
