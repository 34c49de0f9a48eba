use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsearch"))
        .args(args)
        .env_remove("CONVSEARCH_SIDECAR_URL")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn build_index(dir: &Path) -> PathBuf {
    let idx = dir.join("index");
    ok(&[
        "index",
        "--corpus",
        p(&demo().join("corpus.jsonl")),
        "--out",
        p(&idx),
    ]);
    idx
}

#[test]
fn index_then_search() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let out = ok(&["search", "--index", p(&idx), "--query", "the", "-k", "5"]);
    assert!(out.lines().count() <= 5);
    let a = ok(&[
        "search",
        "--index",
        p(&idx),
        "--query",
        "water",
        "--ranker",
        "bm25",
    ]);
    let b = ok(&[
        "search",
        "--index",
        p(&idx),
        "--query",
        "water",
        "--ranker",
        "bm25",
    ]);
    assert_eq!(a, b);
}

#[test]
fn train_run_evaluate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let topics = demo().join("topics.json");
    let qrels = demo().join("qrels.txt");
    let model = dir.path().join("model.bin");
    ok(&[
        "train",
        "--index",
        p(&idx),
        "--topics",
        p(&topics),
        "--qrels",
        p(&qrels),
        "--head",
        "memnet",
        "--out",
        p(&model),
        "--hidden",
        "8",
        "--epochs",
        "2",
        "--dim",
        "16",
    ]);
    assert!(model.exists());
    let run = dir.path().join("run");
    ok(&[
        "run",
        "--index",
        p(&idx),
        "--topics",
        p(&topics),
        "--method",
        "prefix_coref",
        "--coref",
        p(&demo().join("coref.json")),
        "--model",
        p(&model),
        "--qrels",
        p(&qrels),
        "--out",
        p(&run),
        "--dim",
        "16",
        "--rerank-depth",
        "10",
    ]);
    for f in ["run.txt", "retrieval.txt", "turns.jsonl", "metrics.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = ok(&[
        "evaluate",
        "--run",
        p(&run.join("run.txt")),
        "--qrels",
        p(&qrels),
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v.is_object());
    let csv = ok(&[
        "analyze",
        "attention",
        "--logs",
        p(&run.join("turns.jsonl")),
    ]);
    assert!(!csv.is_empty());
    ok(&[
        "analyze",
        "embeddings",
        "--logs",
        p(&run.join("turns.jsonl")),
    ]);
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["search", "--bogus"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = cli(&[
        "index",
        "--corpus",
        p(&missing),
        "--out",
        p(&dir.path().join("i")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let idx = build_index(dir.path());
    let out = cli(&[
        "run",
        "--index",
        p(&idx),
        "--topics",
        p(&demo().join("topics.json")),
        "--method",
        "t5",
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = cli(&[
        "search",
        "--index",
        p(&idx),
        "--query",
        "x",
        "--ranker",
        "tfidf",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
