use std::path::Path;
use std::process::{Command, Output};

fn capqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capqa")).args(args).output().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out_dir = dir.join("exp");
    let mut args = vec!["synth", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = capqa(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out_dir.join("experiment.toml").to_string_lossy().into_owned()
}

#[test]
fn run_then_report_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let run = capqa(&["run", "-c", &cfg]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["items_total"], 10);

    let rep = capqa(&["report", "-c", &cfg]);
    assert_eq!(rep.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&rep.stdout).unwrap();
    assert_eq!(summary["report"], report);

    let validate = capqa(&["validate", "-c", &cfg]);
    let v: serde_json::Value = serde_json::from_slice(&validate.stdout).unwrap();
    let backend_id = v["backend_id"].as_str().unwrap().to_string();
    let replay_dir = dir.path().join("replay");
    let replay = capqa(&["run", "-c", &cfg, "--replay", &backend_id, "--output-dir", replay_dir.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&replay.stdout).unwrap(), report);
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let o = capqa(&["validate", "-c", &cfg, "--stride", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = capqa(&["validate", "-c", &cfg, "--clip-length", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &["--grounding"]);
    let o = capqa(&["run", "-c", &cfg, "--index-stride", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = synth(&dir.path().join("b"), &[]);
    let o = capqa(&["run", "-c", &cfg, "--replay", "mock:nothing", "--cache-path", cfg.as_str()]);
    assert_eq!(o.status.code(), Some(2), "a TOML file is not a cache: {}", String::from_utf8_lossy(&o.stderr));

    let stopped = capqa(&["run", "-c", &cfg, "--stop-after", "4"]);
    assert_eq!(stopped.status.code(), Some(0));
    let o = capqa(&["run", "-c", &cfg, "--replay", "mock:other"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let v: serde_json::Value = serde_json::from_slice(&capqa(&["validate", "-c", &cfg]).stdout).unwrap();
    let o = capqa(&["run", "-c", &cfg, "--replay", v["backend_id"].as_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stride_sweep_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let o = capqa(&["sweep", "-c", &cfg, "--axis", "stride", "--values", "1,2,4,8"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let points: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(points.len(), 4);
}
