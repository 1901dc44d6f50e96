//! CLI error paths: every failure exits nonzero and names the failing stage.

use std::fs;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intentforge"))
}

#[test]
fn pipeline_without_inputs_fails_with_cause() {
    let output = binary().args(["pipeline"]).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("pipeline"), "stderr: {stderr}");
    assert!(stderr.contains("corpus"), "stderr: {stderr}");
}

#[test]
fn missing_corpus_file_names_the_stage() {
    let output = binary()
        .args(["pipeline", "--corpus", "/nonexistent/corpus.jsonl"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ingest"), "stderr: {stderr}");
}

#[test]
fn duplicate_dialogue_id_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.jsonl");
    let line = r#"{"dialogue_id":"d1","turns":[{"speaker":"customer","utterance":"hi"}]}"#;
    fs::write(&path, format!("{line}\n{line}\n")).unwrap();
    let output = binary()
        .args(["ingest", "--corpus", &path.display().to_string()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("duplicate dialogue id"), "stderr: {stderr}");
    assert!(stderr.contains("d1"), "stderr: {stderr}");
}

#[test]
fn task2_evaluation_requires_heldout_set() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let line = r#"{"dialogue_id":"d1","turns":[{"speaker":"customer","utterance":"check balance","dialogue_acts":["InformIntent"],"intents":["X"]}]}"#;
    fs::write(&path, format!("{line}\n")).unwrap();
    let output = binary()
        .args([
            "evaluate",
            "--task",
            "2",
            "--corpus",
            &path.display().to_string(),
            "--k",
            "1",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("labeled"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let output = binary()
        .args(["pipeline", "--set", "quantum=up"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown config key"), "stderr: {stderr}");
}

#[test]
fn bad_stage_number_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let line = r#"{"dialogue_id":"d1","turns":[{"speaker":"customer","utterance":"hi"},{"speaker":"agent","utterance":"yes"}]}"#;
    fs::write(&path, format!("{line}\n")).unwrap();
    let output = binary()
        .args([
            "train",
            "--stage",
            "5",
            "--corpus",
            &path.display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--stage must be 1, 2, or 3"), "stderr: {stderr}");
}
