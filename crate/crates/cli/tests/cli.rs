//! End-to-end checks of the installed binary: stage subcommands compose on
//! one artifact directory and failures exit nonzero with a tagged message.

use std::path::Path;
use std::process::Command;

fn bems() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bems"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "seed": 21,
        "corpus": { "n_buildings": 8, "hours": 480, "archetypes": 3 },
        "forecaster": { "enabled": false },
        "agent": {
            "episodes": 2,
            "episode_hours": 240,
            "normalization_steps": 500,
            "minibatch_size": 128
        },
        "scenarios": { "count": 1 },
        "classify_window_hours": 96
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn stage_subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_tiny_config(dir.path());

    for subcommand in ["synthesize", "cluster", "train", "evaluate", "tariffs", "report"] {
        let output = bems()
            .args([
                subcommand,
                "--config",
                config.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{subcommand} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    assert!(out.join("cluster_model.json").is_file());
    assert!(out.join("policy_cluster0.json").is_file());
    assert!(out.join("evaluation.csv").is_file());
    assert!(out.join("scenarios/sc00.csv").is_file());
}

#[test]
fn classify_prints_cluster_vector_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_tiny_config(dir.path());

    for subcommand in ["synthesize", "cluster"] {
        assert!(bems()
            .args([
                subcommand,
                "--config",
                config.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap()
            .success());
    }

    let building = out.join("corpus/b001.csv");
    let output = bems()
        .args([
            "classify",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--building",
            building.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("cluster:"), "missing cluster line: {stdout}");
    assert!(stdout.contains("dissimilarity:"), "missing vector: {stdout}");
    assert!(stdout.contains("policy_cluster"), "missing policy path: {stdout}");
}

#[test]
fn evaluate_without_artifacts_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fresh");
    let config = write_tiny_config(dir.path());
    let output = bems()
        .args([
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"w": 0}"#).unwrap();
    let output = bems()
        .args(["synthesize", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
