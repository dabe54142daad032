//! End-to-end checks of the `nsnn` binary: exit codes and artifacts.

use std::fs;
use std::path::Path;
use std::process::Command;

fn nsnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nsnn"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn unknown_task_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"task": "train", "out_dir": "{}"}}"#, out.display()),
    );
    let status = nsnn()
        .arg("frobnicate")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(!out.exists(), "no artifacts expected on config errors");
}

#[test]
fn task_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"task": "train"}"#);
    let status = nsnn()
        .arg("stability")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn invalid_noise_scale_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"task": "train", "out_dir": "{}", "network": {{"noise_scale": 7.0}}}}"#,
            out.display()
        ),
    );
    let status = nsnn().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn capacity_guard_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // 2 fixture neurons x 20 steps = 40 spike variables > enumeration guard
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"task": "grad_check", "out_dir": "{}", "grad_check": {{"t_steps": 20, "n_samples": 10}}}}"#,
            out.display()
        ),
    );
    let status = nsnn()
        .arg("grad_check")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
}

#[test]
fn grad_check_writes_verdict_and_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"task": "grad_check", "out_dir": "{}", "grad_check": {{"n_samples": 3000}}}}"#,
            out.display()
        ),
    );
    let status = nsnn()
        .arg("grad_check")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{status:?}");
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert!(verdict["max_abs_bias_over_se"].as_f64().unwrap() < 3.0);
}

#[test]
fn train_then_eval_with_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let out_train = dir.path().join("train");
    let small = r#""dataset": {"n_classes": 2, "input_dim": 10, "t_steps": 4, "n_train": 24, "n_test": 12},
        "network": {"hidden_dims": [6]},
        "optimizer": {"epochs": 2, "batch_size": 8}"#;
    let cfg_train = write_config(
        dir.path(),
        &format!(
            r#"{{"task": "train", "out_dir": "{}", {small}}}"#,
            out_train.display()
        ),
    );
    let status = nsnn()
        .arg("train")
        .arg("--config")
        .arg(&cfg_train)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{status:?}");
    let model = out_train.join("model.json");
    assert!(model.exists());

    let out_eval = dir.path().join("eval");
    let cfg_eval = dir.path().join("eval.json");
    fs::write(
        &cfg_eval,
        format!(
            r#"{{"task": "eval", "out_dir": "{}", "model_in": "{}", {small}}}"#,
            out_eval.display(),
            model.display()
        ),
    )
    .unwrap();
    let status = nsnn()
        .arg("eval")
        .arg("--config")
        .arg(&cfg_eval)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{status:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_eval.join("summary.json")).unwrap()).unwrap();
    assert!(summary["results"]["test_accuracy"].as_f64().is_some());
}

#[test]
fn seed_and_out_overrides_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("somewhere-else");
    let cfg = write_config(
        dir.path(),
        r#"{"task": "stability", "stability": {"a1_grid": [-1.0], "a2_grid": [0.5], "b2_grid": [0.0], "t_final": 5.0, "n_paths": 8}}"#,
    );
    let status = nsnn()
        .arg("stability")
        .arg("--config")
        .arg(&cfg)
        .arg("--seed")
        .arg("7")
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{status:?}");
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.starts_with("# seed=7,"));
}
