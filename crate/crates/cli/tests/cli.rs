use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use ctvae_core::experiment::{Catalog, CorpusSpec};
use ctvae_core::model::load_model;
use ctvae_core::sampler::DistributionSummary;
use ctvae_service::{run_whatif, AppState, WhatIfRequest};
use serde_json::{json, Value as Json};

fn ctvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctvae")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ctvae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Json {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Workdir {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workdir {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        Workdir { _tmp: tmp, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Small corpus, split and a briefly trained model.
    fn fitted() -> Self {
        let w = Self::new();
        let spec = w.p("spec.json");
        std::fs::write(&spec, serde_json::to_string(&CorpusSpec::flip_oracle(8, (50, 50))).unwrap()).unwrap();
        ok(&["make-corpus", "--spec", s(&spec), "--seed", "3", "--out", s(&w.p("corpus"))]);
        ok(&[
            "split", "--data", s(&w.p("corpus/corpus.csv")), "--schema", s(&w.p("corpus/schema.json")),
            "--test-groups", "2", "--seed", "1", "--out", s(&w.p("split")),
        ]);
        ok(&[
            "fit", "--data", s(&w.p("split/train.csv")), "--schema", s(&w.p("corpus/schema.json")),
            "--preset", "64", "--epochs", "5", "--batch-size", "100", "--seed", "2",
            "--out", s(&w.p("m.ctvm")), "--history", s(&w.p("history.json")),
        ]);
        w
    }
}

#[test]
fn corpus_split_fit_generate_evaluate() {
    let w = Workdir::fitted();
    for f in ["corpus/corpus.csv", "corpus/schema.json", "corpus/truth.json", "corpus/catalog.csv"] {
        assert!(w.p(f).exists(), "{f}");
    }
    let split = read_json(&w.p("split/split.json"));
    assert_eq!(split["test_groups"].as_array().unwrap().len(), 2);
    assert_eq!(split["train_rows"].as_u64().unwrap() + split["test_rows"].as_u64().unwrap(), 400);
    assert!(!read_json(&w.p("history.json"))["epochs"].as_array().unwrap().is_empty());

    let gen = |out: &str| {
        ok(&[
            "generate", "--model", s(&w.p("m.ctvm")), "--base-product", "P0", "--catalog",
            s(&w.p("corpus/catalog.csv")), "--override", "g=1", "--n", "300", "--seed", "9", "--out", s(&w.p(out)),
        ])
    };
    gen("a.csv");
    gen("b.csv");
    let a = std::fs::read_to_string(w.p("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(w.p("b.csv")).unwrap());
    assert_eq!(a.lines().next(), Some("b,x"));
    assert_eq!(a.lines().count(), 301);

    ok(&[
        "evaluate", "--real", s(&w.p("split/test.csv")), "--synth", s(&w.p("a.csv")), "--schema",
        s(&w.p("corpus/schema.json")), "--out", s(&w.p("eval.json")),
    ]);
    let e = read_json(&w.p("eval.json"));
    assert_eq!(e["columns"].as_array().unwrap().len(), 2);
    let mc = e["mc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mc));
}

#[test]
fn whatif_provenance_replays_through_the_cli() {
    let w = Workdir::fitted();
    let model = load_model(w.p("m.ctvm")).unwrap();
    let catalog = Catalog::load_csv(w.p("corpus/catalog.csv"), model.bundle().schema()).unwrap();
    let state = Arc::new(AppState::new(model, Some(catalog), 10_000));
    let req: WhatIfRequest = serde_json::from_value(json!({
        "base_product": "P1", "overrides": {"size": "large"}, "n": 800, "summary_columns": ["b", "x"]
    }))
    .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let Ok(resp) = rt.block_on(run_whatif(state, req)) else {
        panic!("what-if request failed")
    };
    let seed = resp.provenance.seed.to_string();

    ok(&[
        "generate", "--model", s(&w.p("m.ctvm")), "--base-product", "P1", "--catalog",
        s(&w.p("corpus/catalog.csv")), "--override", "size=large", "--n", "800", "--seed", &seed,
        "--out", s(&w.p("replay.csv")),
    ]);
    for (i, col) in ["b", "x"].iter().enumerate() {
        let out = w.p(&format!("{col}.json"));
        ok(&["summarize", "--in", s(&w.p("replay.csv")), "--column", col, "--model", s(&w.p("m.ctvm")), "--out", s(&out)]);
        let summary: DistributionSummary = serde_json::from_value(read_json(&out)).unwrap();
        assert_eq!(summary.labels, resp.variant[i].labels);
        assert_eq!(summary.frequencies, resp.variant[i].frequencies);
    }
}

#[test]
fn explicit_base_json_is_accepted() {
    let w = Workdir::fitted();
    ok(&[
        "generate", "--model", s(&w.p("m.ctvm")), "--base-product", r#"{"g":"0","size":"small"}"#,
        "--n", "5", "--out", s(&w.p("o.csv")),
    ]);
    assert_eq!(std::fs::read_to_string(w.p("o.csv")).unwrap().lines().count(), 6);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let w = Workdir::fitted();
    let out = ctvae(&[
        "generate", "--model", s(&w.p("m.ctvm")), "--base-product", "P0", "--catalog",
        s(&w.p("corpus/catalog.csv")), "--override", "flavor=x", "--n", "5", "--out", s(&w.p("o.csv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("flavor"));

    let out = ctvae(&["generate", "--model", s(&w.p("m.ctvm")), "--base-product", "P0", "--n", "5", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--catalog"));

    std::fs::write(w.p("bad.ctvm"), b"junk").unwrap();
    let out = ctvae(&["serve", "--model", s(&w.p("bad.ctvm")), "--bind", "127.0.0.1:0"]);
    assert!(!out.status.success());
}

#[test]
fn summarize_infers_kind_without_a_model() {
    let w = Workdir::new();
    std::fs::write(w.p("t.csv"), "c,v\nred,1\nblue,2\nred,3\nred,4\n").unwrap();
    ok(&["summarize", "--in", s(&w.p("t.csv")), "--column", "c", "--out", s(&w.p("c.json"))]);
    let c: DistributionSummary = serde_json::from_value(read_json(&w.p("c.json"))).unwrap();
    assert_eq!(c.labels, vec!["blue", "red"]);
    assert_eq!(c.frequencies, vec![0.25, 0.75]);
    ok(&["summarize", "--in", s(&w.p("t.csv")), "--column", "v", "--bins", "3", "--out", s(&w.p("v.json"))]);
    let v: DistributionSummary = serde_json::from_value(read_json(&w.p("v.json"))).unwrap();
    assert_eq!(v.frequencies.len(), 3);
    assert!((v.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn sweep_writes_a_report() {
    let w = Workdir::new();
    let spec = w.p("spec.json");
    std::fs::write(&spec, serde_json::to_string(&CorpusSpec::flip_oracle(6, (40, 40))).unwrap()).unwrap();
    ok(&["make-corpus", "--spec", s(&spec), "--out", s(&w.p("corpus"))]);
    let cfg = json!({
        "data": "corpus/corpus.csv",
        "schema": "corpus/schema.json",
        "test_groups": 2,
        "samples_per_product": 200,
        "presets": [64],
        "output_dir": s(&w.p("report")),
        "train": {"max_epochs": 3, "batch_size": 100}
    });
    std::fs::write(w.p("sweep.json"), cfg.to_string()).unwrap();
    let stdout = ok(&["sweep", "--config", s(&w.p("sweep.json"))]);
    assert!(stdout.lines().any(|l| l.starts_with("64\t")), "{stdout}");
    assert!(w.p("report/aggregate.csv").exists());
    assert!(w.p("report/aggregate.json").exists());
}

#[test]
fn builtin_corpus_spec() {
    let w = Workdir::new();
    let stdout = ok(&["make-corpus", "--spec", "flip-oracle", "--seed", "1", "--out", s(&w.p("c"))]);
    assert!(stdout.contains("30 products"), "{stdout}");
}
