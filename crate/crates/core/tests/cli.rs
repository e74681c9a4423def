use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_asktmk"));
    // Keep the environment from switching the binary into remote mode.
    for var in ["ASKTMK_PROVIDER_MODE", "ASKTMK_ENDPOINT", "ASKTMK_API_KEY", "ASKTMK_K", "ASKTMK_PORT"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn validate_fixture() {
    let o = run(&["validate", fixture("vera.tmk.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "ok");
}

#[test]
fn validate_reports_dangling_state() {
    let text = std::fs::read_to_string(fixture("vera.tmk.json")).unwrap();
    let mut model: Value = serde_json::from_str(&text).unwrap();
    let t = model["methods"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .flat_map(|m| m["transitions"].as_array_mut().unwrap().iter_mut())
        .next()
        .unwrap();
    t["to_state"] = "s_nowhere".into();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, model.to_string()).unwrap();

    let o = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("DANGLING_STATE"), "{}", stdout(&o));
    assert!(stderr(&o).starts_with("error: DANGLING_STATE:"), "{}", stderr(&o));
}

#[test]
fn validate_missing_file() {
    let o = run(&["validate", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("IO_ERROR"));
}

#[test]
fn ask_json_matches_working_example() {
    let o = run(&["ask", "--mock", "--json", asktmk::fixtures::WORKING_EXAMPLE_QUESTION]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["class"], "multimodels");
    assert_eq!(v["hits"].as_array().unwrap().len(), 4);
}

#[test]
fn ask_text_output() {
    let o = run(&["ask", "--k", "2", "How does Run Simulation work?"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("class: mmodel"), "{out}");
    assert!(out.contains("answer: "));
}

#[test]
fn ask_empty_question_fails() {
    let o = run(&["ask", " "]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("EMPTY_QUESTION"));
}

#[test]
fn trace_outline_and_bound() {
    let o = run(&["trace", "--task", "t_experiment", "--bind", "c_project=pond"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("bindings {\"c_project\":\"pond\"}"), "{out}");
    assert!(out.contains("task t_edit_model"));

    let o = run(&["trace", "--task", "t_experiment", "--step-bound", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("STEP_BOUND_EXCEEDED"));
}

#[test]
fn eval_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["eval", "run", "--report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("questions: 66  failures: 0"));
    assert!(out.join("records.jsonl").exists());
    assert!(!out.join("report.json").exists(), "unrated run must not write a report");

    let o = run(&["eval", "report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UNRATED_RECORD"));

    let ratings = fixture("published.ratings.jsonl");
    let o = run(&["eval", "report", out.to_str().unwrap(), "--ratings", ratings.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"]["questions"], 66);
}

#[test]
fn index_dump_lists_every_element() {
    let o = run(&["index", "--kinds", "task"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = asktmk::fixtures::vera_model();
    let dump = stdout(&o);
    for t in &model.tasks {
        assert!(dump.contains(&t.id), "missing {}", t.id);
    }
    assert!(!dump.contains(&model.methods[0].id));
}

#[test]
fn serve_requires_model() {
    let o = run(&["serve"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("INVALID_CONFIG"));
}

#[test]
fn bad_config_value() {
    let o = bin().env("ASKTMK_K", "zero").args(["ask", "What is VERA?"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}
