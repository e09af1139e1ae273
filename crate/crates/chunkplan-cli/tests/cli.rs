//! Exit-code and file-output contracts of the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chunkplan"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("chunkplan-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_corpus(path: &Path) {
    let out = bin()
        .args(["corpus", "attention", "--seq", "128", "--dim", "32", "--heads", "2"])
        .args(["--out", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn corpus_and_estimate_succeed() {
    let graph = tmp("att.json");
    write_corpus(&graph);
    let out = bin()
        .args(["estimate", "--graph", graph.to_str().unwrap(), "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["peak_bytes"].as_u64().unwrap() > 0);
    assert_eq!(report["schema_version"], 1);
}

#[test]
fn corpus_documents_are_byte_identical() {
    let (a, b) = (tmp("det_a.json"), tmp("det_b.json"));
    write_corpus(&a);
    write_corpus(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn plan_feasible_exits_zero_and_verifies() {
    let graph = tmp("plan_g.json");
    let plan = tmp("plan_p.json");
    write_corpus(&graph);
    let out = bin()
        .args(["plan", "--graph", graph.to_str().unwrap()])
        .args(["--budget-fraction", "0.4", "--out", plan.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(plan.exists());

    let out = bin()
        .args(["verify", "--graph", graph.to_str().unwrap()])
        .args(["--plan", plan.to_str().unwrap(), "--seed", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));
}

#[test]
fn full_budget_yields_empty_plan_exit_zero() {
    let graph = tmp("full_g.json");
    let plan = tmp("full_p.json");
    write_corpus(&graph);
    let out = bin()
        .args(["plan", "--graph", graph.to_str().unwrap()])
        .args(["--budget-fraction", "1.0", "--out", plan.to_str().unwrap()])
        .args(["--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["steps"].as_array().unwrap().len(), 0);
    assert_eq!(report["total_cost"], 0.0);
    assert_eq!(report["feasible"], true);
}

#[test]
fn malformed_graph_exits_two() {
    let bad = tmp("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = bin()
        .args(["plan", "--graph", bad.to_str().unwrap(), "--budget", "1000"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unachievable_budget_exits_three_with_best_effort_plan() {
    let graph = tmp("tight_g.json");
    let plan = tmp("tight_p.json");
    write_corpus(&graph);
    let out = bin()
        .args(["plan", "--graph", graph.to_str().unwrap()])
        .args(["--budget", "64", "--out", plan.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    // Best-effort plan document still written.
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(doc["feasible"], false);
}

#[test]
fn search_lists_candidates() {
    let graph = tmp("search_g.json");
    write_corpus(&graph);
    let out = bin()
        .args(["search", "--graph", graph.to_str().unwrap(), "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(!report["candidates"].as_array().unwrap().is_empty());
    assert!(report["filter_passing_rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn maxlen_reports_ratio() {
    let out = bin()
        .args(["maxlen", "--family", "mlp", "--budget", "2000000"])
        .args(["--dim", "32", "--hidden", "256", "--cap", "4096", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["chunked_max_len"].as_u64().unwrap() >= report["unchunked_max_len"].as_u64().unwrap());
}

#[test]
fn corrupted_plan_document_exits_two() {
    let graph = tmp("ver_g.json");
    let plan = tmp("ver_p.json");
    write_corpus(&graph);
    let out = bin()
        .args(["plan", "--graph", graph.to_str().unwrap()])
        .args(["--budget-fraction", "0.4", "--out", plan.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    // Break the plan: reference an unknown tensor.
    let text = std::fs::read_to_string(&plan).unwrap().replace("\"qt\"", "\"zz\"");
    std::fs::write(&plan, text).unwrap();
    let out = bin()
        .args(["verify", "--graph", graph.to_str().unwrap()])
        .args(["--plan", plan.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
