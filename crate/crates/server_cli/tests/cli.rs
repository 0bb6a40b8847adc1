use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn l2r(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2r"))
        .args(args)
        .current_dir(dir)
        .env_remove("L2R_API_KEY")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = l2r(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/sample_kb.jsonl")
}

/// An initialized project with the fixture KB and single-threaded answering,
/// so sequence-scripted mocks line up with call order.
fn project() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["init"]);
    let config = dir.path().join("l2r.toml");
    let text = fs::read_to_string(&config).unwrap().replace("parallelism = 4", "parallelism = 1");
    fs::write(&config, text).unwrap();
    ok(dir.path(), &["kb", "import", fixture().to_str().unwrap()]);
    dir
}

fn script(dir: &Path, name: &str, sequence: Vec<String>) -> String {
    fs::write(dir.join(name), json!({ "sequence": sequence }).to_string()).unwrap();
    format!("mock:{name}")
}

fn letter_a(n: usize) -> Vec<String> {
    vec!["ANSWERABLE: YES\nEVIDENCE: []\nREASONING: r\nANSWER: A".to_string(); n]
}

fn write_dataset(dir: &Path) -> &'static str {
    let rows = [
        json!({"id": "d1", "task": "mc1", "question": "Was Barack Obama born in the United States?", "choices": ["Yes", "No"], "gold": [0],
               "gold_knowledge": ["Barack Obama was born in the United States."]}),
        json!({"id": "d2", "task": "mc1", "question": "Is 91 a prime number?", "choices": ["No", "Yes"], "gold": [0],
               "gold_knowledge": ["91 is not a prime number."]}),
        json!({"id": "d3", "task": "mc1", "question": "What is the capital of Mongolia?", "choices": ["Ulaanbaatar", "Lima"], "gold": [0],
               "gold_knowledge": ["The capital of Mongolia is Ulaanbaatar."]}),
    ];
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(dir.join("data.jsonl"), text).unwrap();
    "data.jsonl"
}

#[test]
fn init_creates_layout_and_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["init", "proj"]);
    assert!(out.starts_with("initialized"));
    let proj = dir.path().join("proj");
    for p in ["l2r.toml", "kb", "jobs", "prompts/main_qa.txt", "prompts/qa2knowledge.txt"] {
        assert!(proj.join(p).exists(), "{p} missing");
    }
    fs::write(proj.join("prompts/main_qa.txt"), "custom").unwrap();
    ok(dir.path(), &["init", "proj"]);
    assert_eq!(fs::read_to_string(proj.join("prompts/main_qa.txt")).unwrap(), "custom");
}

#[test]
fn kb_commands() {
    let dir = project();
    let d = dir.path();
    assert_eq!(ok(d, &["kb", "list"]).lines().count(), 6);

    fs::write(d.join("corpus.txt"), "The moon orbits the earth. It takes about a month.\nOk.\n").unwrap();
    let out = ok(d, &["kb", "import", "--mode", "corpus", "--confidence", "0.5", "corpus.txt"]);
    assert_eq!(out.trim(), "2");

    let out = ok(d, &["kb", "add", "Granite is an igneous rock.", "--confidence", "0.4"]);
    let e: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(e["id"], 9);
    assert_eq!(e["confidence"], 0.4);

    let e: Value = serde_json::from_str(&ok(d, &["kb", "set-confidence", "9", "0.9"])).unwrap();
    assert_eq!(e["confidence"], 0.9);
    ok(d, &["kb", "delete", "9"]);
    assert_eq!(ok(d, &["kb", "list"]).lines().count(), 8);
    assert_eq!(ok(d, &["kb", "list", "--all"]).lines().count(), 9);

    assert_eq!(ok(d, &["kb", "export", "out.jsonl"]).trim(), "9");
    assert_eq!(fs::read_to_string(d.join("out.jsonl")).unwrap().lines().count(), 9);

    let out = l2r(d, &["kb", "delete", "99"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = l2r(d, &["kb", "add", "Two facts. In one line."]);
    assert_eq!(out.status.code(), Some(1));
    let out = l2r(d, &["kb", "set-confidence", "1", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["--bogus"],
        vec!["ask"],
        vec!["--alpha", "0", "ask", "q"],
        vec!["--alpha", "abc", "ask", "q"],
        vec!["--k", "0", "ask", "q"],
        vec!["sweep", "data.jsonl", "--alphas", "0.5,x"],
    ] {
        let out = l2r(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(l2r(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn ask_answers_and_hard_refuses() {
    let dir = project();
    let d = dir.path();
    let p = script(d, "mock.json", vec![
        "ANSWERABLE: YES\nEVIDENCE: [2]\nREASONING: r\nANSWER: Yes.".into(),
    ]);
    let out = ok(d, &["--provider", &p, "ask", "Was Barack Obama born in the United States?"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["status"], "answered");
    assert_eq!(v["answer"], "Yes.");
    assert_eq!(v["retrieval"][0]["distance"], 0.0);

    let out = ok(d, &["--provider", &p, "ask", "Where was Barack Obama born?"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["refusal_cause"], "hard");
    assert_eq!(fs::read_to_string(d.join("kb/audit.jsonl")).unwrap().lines().count(), 1);

    // Nothing scripted: the provider error names the audited call.
    let empty = script(d, "empty.json", vec![]);
    let out = l2r(d, &["--provider", &empty, "--alpha", "5", "ask", "Where was Barack Obama born?"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("provider call 0"));

    // Without a key the default provider fails before any request.
    let out = l2r(d, &["ask", "Was Barack Obama born in the United States?"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("L2R_API_KEY"));
}

#[test]
fn eval_writes_report_and_responses() {
    let dir = project();
    let d = dir.path();
    let data = write_dataset(d);
    let p = script(d, "mock.json", letter_a(10));
    let out = ok(d, &["--provider", &p, "eval", data, "--out", "run", "--success-rate"]);
    assert!(out.starts_with("answered 2/3"), "{out}");
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["answered"], 2);
    assert_eq!(report["refusals_hard"], 1);
    assert_eq!(report["accuracy"], 1.0);
    // The refused question would have been answered correctly when forced.
    assert_eq!(report["success_rate"], 0.0);
    assert_eq!(fs::read_to_string(d.join("run/responses.jsonl")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("run/forced.jsonl")).unwrap().lines().count(), 3);

    let out = l2r(d, &["--provider", &p, "eval", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let dir = project();
    let d = dir.path();
    let data = write_dataset(d);
    let p = script(d, "mock.json", letter_a(3));
    ok(d, &["--provider", &p, "sweep", data, "--alphas", "0.25,0.5,0.75,1.0", "--out", "s1"]);
    let csv = fs::read_to_string(d.join("s1/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,answered,refused,accuracy,precision,recall");
    assert_eq!(lines.len(), 5);
    let answered: Vec<usize> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(answered.windows(2).all(|w| w[0] <= w[1]), "{answered:?}");
    assert_eq!(answered[3], 2);

    // Replaying the cache needs no provider at all.
    ok(d, &["sweep", data, "--alphas", "0,inf", "--cache", "s1/forced.jsonl", "--out", "s2"]);
    let csv = fs::read_to_string(d.join("s2/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows[0].starts_with("0,0,3,"));
    assert!(rows[1].starts_with("inf,3,0,"));

    let out = l2r(d, &["sweep", data, "--alphas", "0.5", "--cache", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ratio_writes_csv() {
    let dir = project();
    let d = dir.path();
    let data = write_dataset(d);
    let p = script(d, "mock.json", letter_a(20));
    ok(d, &["--provider", &p, "ratio", data, "--ratios", "0,0.5,1", "--out", "r"]);
    let csv = fs::read_to_string(d.join("r/ratio.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,kb_size,answered,accuracy");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0,0,"));
    assert!(lines[3].starts_with("1,3,3,"), "{csv}");
}

#[test]
fn enrich_with_auto_accept() {
    let dir = project();
    let d = dir.path();
    fs::write(d.join("seeds.txt"), "What is known about the copper?\n").unwrap();
    let p = script(d, "mock.json", vec![
        "1. What color is the copper item?\n2. How heavy is the copper item?".into(),
        "ANSWER: reddish\nCONFIDENCE: 0.75".into(),
        "KNOWLEDGE: The copper item is reddish.".into(),
        "ANSWER: two kilograms\nCONFIDENCE: 0.5".into(),
        "KNOWLEDGE: The copper item weighs two kilograms.".into(),
    ]);
    let out = ok(d, &["--provider", &p, "enrich", "--seeds", "seeds.txt", "-m", "2", "--auto-accept"]);
    assert!(out.contains("2 produced (0 pending review)"), "{out}");
    let list = ok(d, &["kb", "list"]);
    let added: Vec<Value> = list.lines().skip(6).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(added.len(), 2);
    assert_eq!(added[0]["text"], "The copper item is reddish.");
    assert_eq!(added[0]["confidence"], 0.75);
    assert_eq!(added[1]["confidence"], 0.5);
    assert_eq!(added[0]["source"], "ake");
    assert_eq!(fs::read_to_string(d.join("jobs/jobs.jsonl")).unwrap().lines().count(), 1);
}
