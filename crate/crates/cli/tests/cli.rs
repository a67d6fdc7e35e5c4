use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn topiccp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topiccp"))
        .args(args)
        .env_remove("TOPICCP_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = topiccp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen(dir: &Path, seed: &str) {
    ok(&[
        "gen", "--T", "300", "--V", "40", "--K", "3", "--M", "2", "--norm", "1.0", "--eps", "0.5",
        "--min-gap", "60", "--max-gap", "120", "--doc-min", "30", "--doc-max", "60", "--seed", seed,
        "--out-dir", dir.to_str().unwrap(),
    ]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FAST: [&str; 8] = ["--k-grid", "3", "--lda-iters", "40", "--lda-burn-in", "20", "--calibration-intervals", "20"];

#[test]
fn gen_writes_two_files_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "7");
    gen(b.path(), "7");
    for f in ["corpus.jsonl", "truth.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.path().join("truth.json"))["changepoints"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_names_missing_directory() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope");
    let out = topiccp(&["gen", "--T", "30", "--V", "5", "--K", "2", "--M", "0", "--out-dir", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

fn detect(dir: &Path, extra: &[&str]) -> Value {
    let corpus = dir.join("corpus.jsonl");
    let mut args = vec!["detect", "--corpus", corpus.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(&FAST);
    args.extend_from_slice(extra);
    ok(&args);
    for f in ["thresholds.csv", "trace.csv"] {
        assert!(dir.join(f).metadata().unwrap().len() > 0, "{f}");
    }
    json(&dir.join("result.json"))
}

#[test]
fn detect_then_eval() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "3");
    let r = detect(d.path(), &["--delta", "10", "--seed", "1"]);
    assert!(r["changepoints"].is_array());
    assert_eq!(r["config"]["eta"], 0.5);
    assert_eq!(r["config"]["delta"], 10);
    let trace = std::fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("s,e,t,value,threshold"));

    let out = ok(&[
        "eval",
        "--result", d.path().join("result.json").to_str().unwrap(),
        "--truth", d.path().join("truth.json").to_str().unwrap(),
    ]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"]["window"], 50);
    for key in ["precision", "recall", "f_score"] {
        let v = report["metrics"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn conservative_sets_top_quantile() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "4");
    let r = detect(d.path(), &["--delta", "10", "--eta", "0.3", "--conservative"]);
    assert_eq!(r["config"]["eta"], 1.0);
}

#[test]
fn lsa_baseline_dispatch() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "5");
    let r = detect(d.path(), &["--baseline", "lsa", "--lsa-k", "4"]);
    assert_eq!(r["config"]["k"], 4);
    assert!(r["config"].get("k_grid").is_none());
}

#[test]
fn eval_rejects_malformed_result() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "6");
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, "{\"changepoints\": \"x\"").unwrap();
    let out = topiccp(&["eval", "--result", bad.to_str().unwrap(), "--truth", d.path().join("truth.json").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn staged_commands() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "8");
    let p = |f: &str| d.path().join(f).to_str().unwrap().to_string();
    let out = ok(&["fit-topics", "--corpus", &p("corpus.jsonl"), "--k-grid", "2,3", "--lda-iters", "40", "--lda-burn-in", "20", "--out", &p("model.json")]);
    let sel: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sel["scores"].as_array().unwrap().len(), 2);
    ok(&[
        "calibrate", "--corpus", &p("corpus.jsonl"), "--model", &p("model.json"), "--delta", "10",
        "--calibration-intervals", "20", "--out", &p("t.csv"),
    ]);
    let csv = std::fs::read_to_string(p("t.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "length,threshold"));

    ok(&["lsa", "scree", "--corpus", &p("corpus.jsonl"), "--out", &p("scree.csv")]);
    let scree = std::fs::read_to_string(p("scree.csv")).unwrap();
    assert!(scree.lines().count() > 1);
    ok(&["lsa", "embed", "--corpus", &p("corpus.jsonl"), "--k", "3", "--out", &p("emb.bin")]);
    ok(&["lsa", "detect", "--embedding", &p("emb.bin"), "--conservative", "--out-dir", &p("")]);
    assert!(json(&d.path().join("result.json"))["changepoints"].is_array());
}

#[test]
fn preprocessing_flags() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("c.jsonl");
    let stop = d.path().join("stop.txt");
    std::fs::write(
        &corpus,
        (0..6).map(|t| format!("{{\"t\": {t}, \"tokens\": [\"the\", \"a\", \"b\", \"rare{t}\"]}}\n")).collect::<String>(),
    )
    .unwrap();
    std::fs::write(&stop, "the\n").unwrap();
    let scree = d.path().join("s.csv");
    ok(&[
        "lsa", "scree", "--corpus", corpus.to_str().unwrap(), "--min-count", "2", "--stopwords", stop.to_str().unwrap(),
        "--out", scree.to_str().unwrap(),
    ]);
    // vocabulary left: a, b
    assert_eq!(std::fs::read_to_string(&scree).unwrap().lines().count(), 3);
}
