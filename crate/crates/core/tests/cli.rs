mod common;

use std::path::Path;
use std::process::{Command, Output};

use ticket_dispatch::ingestion::{read_assignments, write_tickets};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ticket-dispatch")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_commands() {
    let text = ok(&["--help"]);
    for cmd in ["train", "evaluate", "dispatch", "sweep", "cross-validate", "serve", "gen-data", "split"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn errors_exit_nonzero() {
    let out = cli(&["evaluate", "--data", "/nonexistent.jsonl", "--bundle", "/nonexistent.bundle", "--report", "/tmp/x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("bad.json");
    std::fs::write(&rules, "{\"rules\": [{\"name\": \"r\", \"priority\": 1, \"stage\": \"pre\", \"conditions\": [{\"field\": \"body\", \"matcher_kind\": \"regex\", \"value\": \"(\"}], \"action\": {\"kind\": \"assign\", \"args\": {\"group\": \"G\"}}}]}").unwrap();
    let out = cli(&["serve", "--bundle", "/nonexistent.bundle", "--rules", s(&rules), "--port", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid pattern"));
}

#[test]
fn train_evaluate_dispatch_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    ok(&["gen-data", "--out", s(&p("all.jsonl")), "--n", "1500", "--seed", "3"]);
    ok(&["split", "--data", s(&p("all.jsonl")), "--train-out", s(&p("train.jsonl")), "--test-out", s(&p("test.jsonl"))]);
    std::fs::write(p("config.json"), serde_json::to_string(&common::small_config()).unwrap()).unwrap();
    ok(&["train", "--config", s(&p("config.json")), "--data", s(&p("train.jsonl")), "--out", s(&p("e.bundle"))]);

    let long_tail = common::assets().join("rules/long_tail.json");
    let table = ok(&[
        "evaluate", "--data", s(&p("test.jsonl")), "--bundle", s(&p("e.bundle")),
        "--rules", s(&long_tail), "--report", s(&p("report.json")),
    ]);
    assert!(table.contains("end_to_end"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("report.json")).unwrap()).unwrap();
    for key in ["classifier_only", "end_to_end", "members", "long_tail", "provenance"] {
        assert!(report.get(key).is_some(), "{key}");
    }

    let fixture = common::small_corpus(40, 99);
    write_tickets(&fixture, p("in.jsonl")).unwrap();
    ok(&["dispatch", "--data", s(&p("in.jsonl")), "--bundle", s(&p("e.bundle")), "--out", s(&p("out.jsonl"))]);
    let decisions = read_assignments(p("out.jsonl")).unwrap();
    assert_eq!(decisions.len(), 40);
    assert!(decisions.iter().zip(&fixture).all(|(d, t)| d.ticket_id == t.id));

    let sweep = ok(&["sweep", "--data", s(&p("test.jsonl")), "--bundle", s(&p("e.bundle")), "--grid", "0.2,0.5,0.8"]);
    assert!(sweep.contains("coverage violations: 0"), "{sweep}");

    let cv = ok(&["cross-validate", "--config", s(&p("config.json")), "--data", s(&p("train.jsonl")), "--folds", "2"]);
    assert!(cv.contains("mean accuracy"));
}
