use std::path::Path;
use std::process::{Command, Output};

use twinsem_core::experiment::{read_summary_csv, report};

fn twinsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinsem")).args(args).output().unwrap()
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_pick_place.csv")
}

#[test]
fn report_reductions_from_fixture() {
    let rows = read_summary_csv(&fixture()).unwrap();
    let rep = report(&rows).unwrap();
    let red = |label: &str| rep.rows.iter().find(|r| r.summary.scheme == label).unwrap().reduction;
    assert_eq!(red("Wired"), None);
    assert_eq!(red("Wireless"), Some(0.0));
    assert!((100.0 * red("FS").unwrap() - 37.2).abs() < 0.1);
    assert!((100.0 * red("FS&PPDQN(SC)").unwrap() - 59.5).abs() < 0.1);
    assert!((100.0 * red("FS&PPDQN(RC)").unwrap() - 79.6).abs() < 0.1);
}

#[test]
fn report_command_round_trips_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinsem(&["report", "--input", fixture().to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("59.56%") && text.contains("79.56%"), "{text}");
    let again = read_summary_csv(&dir.path().join("summary.csv")).unwrap();
    let orig = read_summary_csv(&fixture()).unwrap();
    assert_eq!(again.len(), orig.len());
    for (a, b) in again.iter().zip(&orig) {
        assert_eq!(a.scheme, b.scheme);
        assert_eq!(a.cumulative_load, b.cumulative_load);
        assert!((a.mean_e_q - b.mean_e_q).abs() <= 1e-9 * b.mean_e_q);
    }
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn bad_config_is_a_json_error_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"task": "pick_place", "eval_episodes": 0, "pid": {"gains": {"kp": -1, "ki": 1, "kd": 0}}}"#)
        .unwrap();
    let out = twinsem(&["baseline", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let v = error_json(&out);
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().len() > 5);
}

#[test]
fn missing_file_and_unknown_task_are_reported() {
    let out = twinsem(&["trajectory", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");
    let out = twinsem(&["trajectory", "--task", "juggle"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn eval_rejects_a_checkpoint_from_another_task() {
    let dir = tempfile::tempdir().unwrap();
    let ck = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/checkpoints/pick_toss_sc.json");
    let out = twinsem(&[
        "eval",
        "--task",
        "pick_place",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn calibrate_channel_prints_the_target_rate() {
    let out = twinsem(&["calibrate-channel", "--target", "0.9"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["delivery_probability"].as_f64().unwrap() - 0.9).abs() < 1e-9);
    let out = twinsem(&["calibrate-channel", "--paper-params"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["delivery_probability"].as_f64().unwrap() < 1e-4);
}
