use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hcrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcrl")).args(args).env_remove("HCRL_BIND").env_remove("HCRL_RUN_DIR").output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {text}"))
}

fn train_small(dir: &Path) -> Value {
    let dir = dir.to_str().unwrap();
    let out = hcrl(&[
        "train", "--env", "gridworld", "--source", "scripted", "--schedule", "0,1,1,2,2,3,3,4,4,5", "--steps", "5120",
        "--eval-episodes", "10", "--run-dir", dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    stdout_json(&out)
}

#[test]
fn train_eval_sweep_replay() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let summary = train_small(&run);
    assert_eq!(summary["reached_total"], true);
    let ckpt = summary["final_checkpoint"].as_str().unwrap().to_string();
    assert!(run.join("metrics.log").exists() && run.join("events.log").exists() && run.join("config.json").exists());

    let out = hcrl(&["eval", "--checkpoint", &ckpt, "--level", "2", "--episodes", "20", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["difficulty"], 2);
    assert_eq!(report["episodes"], 20);

    let out = hcrl(&["sweep", "--checkpoint", &ckpt, "--levels", "0,5", "--episodes", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["reports"].as_array().unwrap().len(), 2);

    let out = hcrl(&["replay", "--run-dir", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["identical"], true);
}

#[test]
fn run_dir_from_environment() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_hcrl"))
        .args(["train", "--env", "walljumper", "--source", "auto", "--steps", "5120", "--no-eval"])
        .env("HCRL_RUN_DIR", &run)
        .env_remove("HCRL_BIND")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoints/final.ckpt").exists());
    assert_eq!(stdout_json(&out)["reached_total"], true);
}

#[test]
fn errors_exit_with_one() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    train_small(&run);
    // a used run directory is refused rather than overwritten
    let out = hcrl(&["train", "--steps", "5120", "--run-dir", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    // scripted without a schedule
    let out = hcrl(&["train", "--source", "scripted", "--run-dir", root.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = hcrl(&["eval", "--checkpoint", root.path().join("missing.ckpt").to_str().unwrap(), "--level", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(hcrl(&["train", "--env", "crawler"]).status.code(), Some(2));
    assert_eq!(hcrl(&["fly"]).status.code(), Some(2));
}
