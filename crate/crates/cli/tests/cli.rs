//! Exit codes, configuration precedence and output metadata of `nomen`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nomen")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "nomen {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn toy() -> String {
    data_file("toy100.jsonl").to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train"],
        vec!["no-such-command"],
        vec!["split", "--tau", "many"],
        vec!["eval", "--ref", "x", "--pred", "p", "--random-baseline"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(dir.path(), &["train"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dataset"));
}

#[test]
fn bad_values_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy();
    ok(dir.path(), &["split", "--corpus", &corpus, "--tau", "2", "--out", "ds"]);
    for args in [
        vec!["train", "--dataset", "ds", "--arch", "rnn"],
        vec!["train", "--dataset", "ds", "--embed-dim", "10", "--heads", "3"],
        vec!["split", "--corpus", &corpus, "--ratios", "0.5,0.5", "--out", "x"],
    ] {
        assert_eq!(run(dir.path(), &args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy();
    std::fs::write(dir.path().join("broken.jsonl"), "{not json\n").unwrap();
    for args in [
        vec!["train", "--dataset", "missing-dir"],
        vec!["ingest", "--corpus", "missing.jsonl", "--out", "x.jsonl"],
        vec!["ingest", "--corpus", "broken.jsonl", "--out", "x.jsonl"],
        // the default tau leaves no vocabulary on a 100-function corpus
        vec!["split", "--corpus", &corpus, "--out", "ds"],
        vec!["predict", "--checkpoint", "broken.jsonl", "--corpus", "broken.jsonl"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn flags_override_config_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy();
    std::fs::write(dir.path().join("run.conf"), "# shared settings\ntau = 3\nmin_len = 6\nepochs = 99\n").unwrap();
    ok(dir.path(), &["split", "--corpus", &corpus, "--tau", "2", "--out", "d0"]);
    ok(dir.path(), &["split", "--config", "run.conf", "--corpus", &corpus, "--out", "d1"]);
    ok(dir.path(), &["split", "--config", "run.conf", "--corpus", &corpus, "--tau", "2", "--min-len", "7", "--out", "d2"]);
    let cfg = |d: &str| json(&dir.path().join(d).join("meta.json"))["config"].clone();
    assert_eq!(cfg("d0")["min-len"], "5");
    assert_eq!(cfg("d0")["max-name-tokens"], "10");
    assert_eq!(cfg("d1")["tau"], "3");
    assert_eq!(cfg("d1")["min-len"], "6");
    assert_eq!(cfg("d2")["tau"], "2");
    assert_eq!(cfg("d2")["min-len"], "7");
    // keys for other subcommands are ignored, paths are not recorded
    assert!(cfg("d1").get("epochs").is_none());
    assert!(cfg("d1").get("corpus").is_none());
    assert!(cfg("d1").get("input.corpus").is_some());
    assert_ne!(cfg("d1")["run_config_digest"], cfg("d2")["run_config_digest"]);

    std::fs::write(dir.path().join("dup.conf"), "tau = 3\ntau = 4\n").unwrap();
    let out = run(dir.path(), &["split", "--config", "dup.conf", "--corpus", &corpus, "--out", "d3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn same_inputs_at_other_paths_give_same_digest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data_file("toy100.jsonl"), dir.path().join("copy.jsonl")).unwrap();
    ok(dir.path(), &["split", "--corpus", &toy(), "--tau", "2", "--out", "a", "--workers", "1"]);
    ok(dir.path(), &["split", "--corpus", "copy.jsonl", "--tau", "2", "--out", "sub/b", "--deterministic"]);
    for f in ["meta.json", "corpus.jsonl", "manifest.json", "name_vocab.tsv", "instr_vocab.tsv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("sub/b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn outputs_carry_run_config_digest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["split", "--corpus", &toy(), "--tau", "2", "--out", "ds"]);
    ok(d, &["train", "--dataset", "ds", "--epochs", "1", "--batch-size", "32", "--out", "m.ckpt"]);
    let log = std::fs::read_to_string(d.join("m.ckpt.log.tsv")).unwrap();
    assert!(log.starts_with("# run_config_digest="));
    assert_eq!(log.lines().count(), 3);

    ok(d, &["predict", "--checkpoint", "m.ckpt", "--dataset", "ds", "--out", "pred.jsonl"]);
    let side = json(&d.join("pred.jsonl.meta.json"));
    assert_eq!(side["run_config"]["command"], "predict");
    assert_eq!(side["run_config"]["split"], "test");
    assert_eq!(side["run_config_digest"].as_str().unwrap().len(), 64);

    let summary = ok(d, &["eval", "--pred", "pred.jsonl", "--ref", "ds", "--out", "report.json"]);
    assert!(summary.lines().count() >= 2, "{summary}");
    let report = json(&d.join("report.json"));
    assert!(report["run_config"]["input.pred"].is_string());
    assert!(report["report"]["aggregate"].is_object());

    ok(d, &["stats", "--dataset", "ds", "--out", "ranks.tsv"]);
    assert!(d.join("ranks.tsv.meta.json").exists());
    let ranks = std::fs::read_to_string(d.join("ranks.tsv")).unwrap();
    assert!(ranks.starts_with("1\t"));
}

#[test]
fn eval_accepts_raw_names() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["split", "--corpus", &toy(), "--tau", "2", "--out", "ds"]);
    // predict every test function by its original (unnormalized) name
    let corpus = std::fs::read_to_string(d.join("ds/corpus.jsonl")).unwrap();
    let manifest = json(&d.join("ds/manifest.json"));
    let mut lines = Vec::new();
    for line in corpus.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if manifest["assignment"][v["package"].as_str().unwrap()] == "test" {
            lines.push(serde_json::json!({ "id": v["id"], "name": v["name"] }).to_string());
        }
    }
    assert!(!lines.is_empty());
    std::fs::write(d.join("names.jsonl"), lines.join("\n") + "\n").unwrap();
    ok(d, &["eval", "--pred", "names.jsonl", "--ref", "ds", "--out", "r.json"]);
    let f1 = json(&d.join("r.json"))["report"]["aggregate"]["f1"].as_f64().unwrap();
    assert!((f1 - 1.0).abs() < 1e-12, "{f1}");
}

#[test]
fn gradcheck_reports_each_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seeds", "2"]);
    assert_eq!(out.lines().filter(|l| !l.trim().is_empty()).count(), 4, "{out}");
}
