use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn igp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn steps(uniform: usize, one_hot: usize) -> serde_json::Value {
    let mut v = vec![json!({"top": [["a", -0.5], ["b", -0.5]]}); uniform];
    v.extend(vec![json!({"top": [["a", 0.0], ["b", -1000.0]]}); one_hot]);
    json!({ "steps": v })
}

/// Toy workspace: 3 passages, 2 queries, stub where only `p2` helps.
fn workspace(with_fallback: bool) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("corpus.jsonl"),
        [
            json!({"id": "p1", "contents": "granite quarry near the ridge"}),
            json!({"id": "p2", "contents": "the ridge quarry yields granite slabs for masons"}),
            json!({"id": "p3", "contents": "masons carve marble"}),
        ]
        .iter()
        .map(|v| v.to_string() + "\n")
        .collect::<String>(),
    )
    .unwrap();
    std::fs::write(
        d.join("dataset.jsonl"),
        [
            json!({"id": "q1", "question": "What does the ridge quarry yield?", "golden_answers": ["granite slabs"]}),
            json!({"id": "q2", "question": "What do masons carve?", "golden_answers": ["marble"]}),
        ]
        .iter()
        .map(|v| v.to_string() + "\n")
        .collect::<String>(),
    )
    .unwrap();
    std::fs::write(d.join("qrels.tsv"), "q1\tp2\t1\nq2\tp3\t1\n").unwrap();
    let mut stub = json!({
        "rules": [
            {"contains": ["Output only the answer.", "slabs"], "script": {"answer": "granite slabs"}},
            {"contains": ["Output only the answer."], "script": {"answer": "unknown"}},
            {"contains": ["Context:\n", "slabs"], "script": steps(0, 3)},
            {"contains": ["Context:\n"], "script": steps(3, 0)}
        ]
    });
    if with_fallback {
        stub["fallback"] = steps(1, 2);
    }
    std::fs::write(d.join("stub.json"), stub.to_string()).unwrap();
    std::fs::write(
        d.join("run.toml"),
        r#"
corpus = "corpus.jsonl"
dataset = "dataset.jsonl"
qrels = "qrels.tsv"
output_dir = "out/run"
parallelism = 2

[backend]
kind = "stub"
path = "stub.json"

[probe]
top_k = 4
max_tokens = 8

[selection]
rerank = "igp"
threshold = 0.05
top_m = 2
"#,
    )
    .unwrap();
    dir
}

#[test]
fn index_is_deterministic_and_reports_missing_corpus() {
    let ws = workspace(true);
    let d = ws.path();
    let a = igp(&["index", "--corpus", "corpus.jsonl", "-o", "a.bin"], d);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("indexed 3 passages"));
    let b = igp(&["index", "--corpus", "corpus.jsonl", "-o", "b.bin"], d);
    assert!(b.status.success());
    assert_eq!(
        std::fs::read(d.join("a.bin")).unwrap(),
        std::fs::read(d.join("b.bin")).unwrap()
    );

    let missing = igp(&["index", "--corpus", "nope.jsonl", "-o", "c.bin"], d);
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("not found"), "{}", stderr(&missing));
}

#[test]
fn run_writes_run_directory() {
    let ws = workspace(true);
    let d = ws.path();
    let o = igp(&["run", "-c", "run.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("igp topm=2 n=2 f1=0.5000"), "{}", stdout(&o));
    let run = d.join("out/run");
    let records = std::fs::read_to_string(run.join("records.jsonl")).unwrap();
    let parsed: Vec<serde_json::Value> = records.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0]["selected"], json!(["p2"]));
    // the stub treats p2 as informative for any question
    assert_eq!(parsed[1]["selected"], json!(["p2"]));
    assert_eq!(parsed[1]["f1"], json!(0.0));
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,topm,tp,f1,tk,nte,ndcg,n"));
    assert!(run.join("config.toml").exists());
}

#[test]
fn flag_overrides_apply() {
    let ws = workspace(true);
    let d = ws.path();
    let o = igp(
        &[
            "run",
            "-c",
            "run.toml",
            "--tp",
            "-inf",
            "--topm",
            "1",
            "--k",
            "2",
            "-o",
            "out/open",
            "--no-generate",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let snapshot = std::fs::read_to_string(d.join("out/open/config.toml")).unwrap();
    assert!(snapshot.contains("threshold = -inf"), "{snapshot}");
    assert!(snapshot.contains("top_k = 2"));
    let records = std::fs::read_to_string(d.join("out/open/records.jsonl")).unwrap();
    for line in records.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["selected"].as_array().unwrap().len(), 1);
        assert!(v["prediction"].is_null());
    }

    let bad = igp(&["run", "-c", "run.toml", "--rerank", "crossencoder"], d);
    assert!(!bad.status.success());
    let bad = igp(&["run", "-c", "run.toml", "--k", "1"], d);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("top_k"), "{}", stderr(&bad));
}

#[test]
fn failure_ceiling_sets_exit_code() {
    let ws = workspace(false);
    let o = igp(&["run", "-c", "run.toml"], ws.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let records = std::fs::read_to_string(ws.path().join("out/run/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
}

#[test]
fn sweep_and_report() {
    let ws = workspace(true);
    let d = ws.path();
    let s = igp(
        &[
            "sweep",
            "-c",
            "run.toml",
            "--tp-grid=-inf,0,0.05",
            "--topm-grid",
            "1,2",
            "-o",
            "out/sweep",
        ],
        d,
    );
    assert!(s.status.success(), "{}", stderr(&s));
    assert!(stdout(&s).starts_with("6 grid points"));
    let csv = std::fs::read_to_string(d.join("out/sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let none = igp(&["run", "-c", "run.toml", "--rerank", "none", "-o", "out/none"], d);
    assert!(none.status.success(), "{}", stderr(&none));
    let r = igp(
        &[
            "report",
            "out/sweep/sweep.csv",
            "out/none/summary.csv",
            "-o",
            "out/report",
        ],
        d,
    );
    assert!(r.status.success(), "{}", stderr(&r));
    let pareto = std::fs::read_to_string(d.join("out/report/pareto.csv")).unwrap();
    assert_eq!(pareto.lines().count(), 8);
    assert!(pareto.starts_with("dataset,method,topm,tp,k,mt,f1,tk,dominated"));
    let corr = std::fs::read_to_string(d.join("out/report/correlation.csv")).unwrap();
    assert!(corr.starts_with("dataset,topm,n,spearman"));
}
