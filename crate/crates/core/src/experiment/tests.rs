use super::*;
use crate::error::Error;
use crate::metrics::aggregate;
use crate::model::TrainConfig;

fn desk_config(dir: &std::path::Path, presets: Vec<usize>, baseline: bool) -> ExperimentConfig {
    let corpus = make_synthetic_corpus(&CorpusSpec::flip_oracle(12, (40, 60)), 5).unwrap();
    corpus.save(dir).unwrap();
    ExperimentConfig {
        data: dir.join("corpus.csv"),
        schema: dir.join("schema.json"),
        test_groups: 3,
        samples_per_product: 300,
        presets,
        seeds: ExperimentSeeds {
            split: 1,
            train: 2,
            generate: 3,
        },
        output_dir: dir.join("report"),
        train: TrainConfig {
            max_epochs: 4,
            batch_size: 100,
            ..Default::default()
        },
        baseline,
        histogram_bins: 10,
    }
}

#[test]
fn holdout_report_structure_and_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), vec![64], true);
    let report = run_holdout(&cfg).unwrap();
    assert_eq!(report.presets.len(), 1);
    let run = &report.presets[0].ctvae;
    assert_eq!(run.products.len(), 3);
    assert!(report.presets[0].baseline.is_some());
    // Aggregates recompute from the stored product scores.
    assert_eq!(aggregate(&run.products).unwrap(), run.aggregate);
    for s in &run.products {
        assert!((0.0..=1.0).contains(&s.mc));
        assert!(report.provenance.test_products.contains(&s.product));
    }
    assert_eq!(report.histograms.len(), 3);
    for h in &report.histograms {
        for c in &h.columns {
            assert!((c.synthetic.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(c.delta.deltas.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}

#[test]
fn holdout_is_deterministic_and_emission_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), vec![64], false);
    let a = run_holdout(&cfg).unwrap();
    let b = run_holdout(&cfg).unwrap();
    assert_eq!(a, b);

    let out = dir.path().join("out");
    let files = emit_report(&a, &out).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let again = emit_report(&b, &out).unwrap();
    assert_eq!(files, again);
    let second: Vec<Vec<u8>> = again.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(first, second);

    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + cfg.presets.len());
    let hist = files.iter().find(|f| f.to_string_lossy().contains("histograms")).unwrap();
    let h: ProductHistograms = serde_json::from_slice(&std::fs::read(hist).unwrap()).unwrap();
    let b_col = h.columns.iter().find(|c| c.column == "b").unwrap();
    assert_eq!(b_col.real.frequencies.len(), 2);
    assert!((b_col.real.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn sweep_has_one_row_per_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), vec![64], false);
    let (report, table) = dimension_sweep(&cfg, &[64, 128]).unwrap();
    assert_eq!(table.iter().map(|r| r.preset).collect::<Vec<_>>(), vec![64, 128]);
    assert_eq!(report.presets.len(), 2);
    // A single-preset sweep equals the holdout aggregates.
    let (single, t1) = dimension_sweep(&cfg, &[64]).unwrap();
    assert_eq!(t1.len(), 1);
    assert_eq!(t1[0].average_mc, single.presets[0].ctvae.aggregate.average_mc);
    assert_eq!(single.presets[0], report.presets[0]);
}

#[test]
fn config_validation_and_stage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(dir.path(), vec![], false);
    assert!(run_holdout(&cfg).is_err());
    cfg.presets = vec![64];
    cfg.samples_per_product = 0;
    assert!(run_holdout(&cfg).is_err());
    cfg.samples_per_product = 10;
    cfg.test_groups = 50;
    match run_holdout(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "split"),
        other => panic!("unexpected {other:?}"),
    }
    cfg.data = dir.path().join("missing.csv");
    match run_holdout(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_file_paths_resolve_relative_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    std::fs::write(&path, r#"{"data": "corpus.csv", "schema": "schema.json", "presets": [64, 256]}"#).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.data, dir.path().join("corpus.csv"));
    assert_eq!(cfg.presets, vec![64, 256]);
    assert_eq!(cfg.samples_per_product, 2000);
    std::fs::write(&path, r#"{"data": "c.csv", "schema": "s.json", "bogus": 1}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}
