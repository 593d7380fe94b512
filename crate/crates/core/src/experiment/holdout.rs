//! Product-level holdout: split by product, train on the training products,
//! generate for each held-out product under its own conditions, and score
//! against that product's real rows.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Catalog;
use crate::error::{Error, Result};
use crate::exec::try_map_indexed;
use crate::metrics::{aggregate, mean_complement, AggregateScore, ProductScore};
use crate::model::{train, ModelParams, TrainConfig, TrainingHistory};
use crate::sampler::{compare, generate_encoded, summarize_values, DistributionDelta, DistributionSummary, SummarySpec};
use crate::schema::{ingest_table, load_schema, split_by_group, ColumnSpec, Dataset, Value};
use crate::stream_rng;
use crate::transform::ColumnTransform;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSeeds {
    pub split: u64,
    pub train: u64,
    pub generate: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_test_groups")]
    pub test_groups: usize,
    #[serde(default = "default_samples")]
    pub samples_per_product: usize,
    #[serde(default = "default_presets")]
    pub presets: Vec<usize>,
    #[serde(default)]
    pub seeds: ExperimentSeeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Training settings; `preset` and `seed` are overridden per run.
    #[serde(default)]
    pub train: TrainConfig,
    /// Also train and score the unconditional baseline.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_test_groups() -> usize {
    3
}
fn default_samples() -> usize {
    2000
}
fn default_presets() -> Vec<usize> {
    vec![64]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("report")
}
fn default_bins() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_product == 0 {
            return Err(Error::Argument("samples_per_product must be at least 1".into()));
        }
        if self.presets.is_empty() {
            return Err(Error::Argument("at least one preset is required".into()));
        }
        if self.test_groups == 0 {
            return Err(Error::Argument("test_groups must be at least 1".into()));
        }
        for &p in &self.presets {
            self.train_config(p, true).validate()?;
        }
        Ok(())
    }

    /// Reads a JSON config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.data, &mut cfg.schema, &mut cfg.output_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn train_config(&self, preset: usize, conditioning: bool) -> TrainConfig {
        TrainConfig {
            preset,
            custom_arch: None,
            seed: self.seeds.train,
            conditioning,
            ..self.train.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: String,
    pub aggregate: AggregateScore,
    pub products: Vec<ProductScore>,
    pub history: TrainingHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnHistogram {
    pub column: String,
    pub real: DistributionSummary,
    pub synthetic: DistributionSummary,
    pub delta: DistributionDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductHistograms {
    pub preset: usize,
    pub product: String,
    pub columns: Vec<ColumnHistogram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    pub preset: usize,
    pub ctvae: ModelRun,
    pub baseline: Option<ModelRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub test_products: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub presets: Vec<PresetResult>,
    pub histograms: Vec<ProductHistograms>,
    pub provenance: ReportProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub preset: usize,
    pub average_mc: f64,
    pub weighted_average_mc: f64,
    pub baseline_average_mc: Option<f64>,
    pub baseline_weighted_average_mc: Option<f64>,
}

impl ExperimentReport {
    /// One row per preset with the aggregate scores.
    pub fn table(&self) -> Vec<SweepRow> {
        self.presets
            .iter()
            .map(|p| SweepRow {
                preset: p.preset,
                average_mc: p.ctvae.aggregate.average_mc,
                weighted_average_mc: p.ctvae.aggregate.weighted_average_mc,
                baseline_average_mc: p.baseline.as_ref().map(|b| b.aggregate.average_mc),
                baseline_weighted_average_mc: p.baseline.as_ref().map(|b| b.aggregate.weighted_average_mc),
            })
            .collect()
    }
}

pub fn run_holdout(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let schema = load_schema(&cfg.schema).map_err(|e| e.at_stage("load"))?;
    let data = ingest_table(&cfg.data, &schema).map_err(|e| e.at_stage("load"))?;
    run_holdout_on(&data, cfg)
}

/// Runs the holdout once per preset in `presets`, sharing split and seeds.
pub fn dimension_sweep(cfg: &ExperimentConfig, presets: &[usize]) -> Result<(ExperimentReport, Vec<SweepRow>)> {
    let cfg = ExperimentConfig {
        presets: presets.to_vec(),
        ..cfg.clone()
    };
    let report = run_holdout(&cfg)?;
    let table = report.table();
    Ok((report, table))
}

/// Holdout over an in-memory dataset; `cfg.data` and `cfg.schema` are
/// recorded but not read.
pub fn run_holdout_on(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_holdout_with_models(data, cfg).map(|(report, _)| report)
}

/// As [`run_holdout_on`], also returning the conditional model trained for
/// each preset, in preset order.
pub fn run_holdout_with_models(data: &Dataset, cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<ModelParams>)> {
    cfg.validate()?;
    let split = split_by_group(data, cfg.test_groups, cfg.seeds.split).map_err(|e| e.at_stage("split"))?;
    let test_products = split.test_groups();
    let train_products: BTreeSet<String> = split.train_groups().into_iter().collect();
    if let Some(p) = test_products.iter().find(|p| train_products.contains(*p)) {
        return Err(Error::Contract(format!("test product `{p}` appears in the fitting data")).at_stage("split"));
    }
    let catalog = Catalog::from_dataset(&split.test).map_err(|e| e.at_stage("split"))?;
    let schema = data.schema();
    let target_idx: Vec<usize> = schema.targets().map(|(j, _)| j).collect();
    let target_cols: Vec<ColumnSpec> = schema.targets().map(|(_, c)| c.clone()).collect();
    let real_targets: BTreeMap<&str, Vec<Vec<Value>>> = test_products
        .iter()
        .map(|p| {
            let rows = (0..split.test.len())
                .filter(|&i| split.test.group(i) == p)
                .map(|i| target_idx.iter().map(|&j| split.test.row(i)[j].clone()).collect())
                .collect();
            (p.as_str(), rows)
        })
        .collect();

    let mut presets = Vec::new();
    let mut models = Vec::new();
    let mut histograms = Vec::new();
    for &preset in &cfg.presets {
        let stage = |s: &'static str| move |e: Error| e.at_stage(s);
        let (model, history) = train(&split.train, &cfg.train_config(preset, true)).map_err(stage("train"))?;
        let (ctvae, synth) =
            score_model(&model, history, &catalog, &test_products, &real_targets, &target_cols, cfg)?;
        histograms.extend(product_histograms(&model, preset, &test_products, &real_targets, &synth, &target_cols, cfg.histogram_bins)?);
        let baseline = if cfg.baseline {
            let (bm, bh) = train(&split.train, &cfg.train_config(preset, false)).map_err(stage("train"))?;
            Some(score_model(&bm, bh, &catalog, &test_products, &real_targets, &target_cols, cfg)?.0)
        } else {
            None
        };
        presets.push(PresetResult {
            preset,
            ctvae,
            baseline,
        });
        models.push(model);
    }
    let report = ExperimentReport {
        presets,
        histograms,
        provenance: ReportProvenance {
            config: cfg.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            test_products,
            train_rows: split.train.len(),
            test_rows: split.test.len(),
        },
    };
    Ok((report, models))
}

/// Seed for product `index`: a fixed draw from the generate stream.
fn product_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, index as u64).gen()
}

type Synth = Vec<Vec<Vec<Value>>>;

fn score_model(
    model: &ModelParams,
    history: TrainingHistory,
    catalog: &Catalog,
    products: &[String],
    real: &BTreeMap<&str, Vec<Vec<Value>>>,
    target_cols: &[ColumnSpec],
    cfg: &ExperimentConfig,
) -> Result<(ModelRun, Synth)> {
    let exec = cfg.train.execution;
    let synth: Synth = try_map_indexed(exec, products.len(), |i| -> Result<Vec<Vec<Value>>> {
        let cond = catalog
            .get(&products[i])
            .ok_or_else(|| Error::Contract(format!("no conditions for `{}`", products[i])))?;
        let rc = model.bundle().encode_condition(cond)?;
        generate_encoded(model, &rc, cfg.samples_per_product, product_seed(cfg.seeds.generate, i), crate::Execution::Sequential)
    })
    .map_err(|e| e.at_stage("generate"))?;
    let scores = products
        .iter()
        .zip(&synth)
        .map(|(p, s)| mean_complement(p, target_cols, &real[p.as_str()], s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("score"))?;
    let agg = aggregate(&scores).map_err(|e| e.at_stage("score"))?;
    Ok((
        ModelRun {
            model: model.fingerprint(),
            aggregate: agg,
            products: scores,
            history,
        },
        synth,
    ))
}

fn product_histograms(
    model: &ModelParams,
    preset: usize,
    products: &[String],
    real: &BTreeMap<&str, Vec<Vec<Value>>>,
    synth: &Synth,
    target_cols: &[ColumnSpec],
    bins: usize,
) -> Result<Vec<ProductHistograms>> {
    let bundle = model.bundle();
    let mut out = Vec::new();
    for (p, s) in products.iter().zip(synth) {
        let rows = &real[p.as_str()];
        let mut columns = Vec::new();
        for (k, col) in target_cols.iter().enumerate() {
            let j = bundle.schema().index_of(&col.name).expect("target column in bundle");
            let real_vals: Vec<Value> = rows.iter().map(|r| r[k].clone()).collect();
            let synth_vals: Vec<Value> = s.iter().map(|r| r[k].clone()).collect();
            let spec = match bundle.transform(j) {
                ColumnTransform::Continuous(t) => SummarySpec {
                    bins,
                    range: Some(t.range),
                    categories: None,
                },
                ColumnTransform::Discrete(t) => {
                    // Test rows may hold categories the training rows never showed.
                    let mut cats = t.vocabulary().to_vec();
                    for v in &real_vals {
                        if let Some(c) = v.as_cat() {
                            if !cats.iter().any(|x| x == c) {
                                cats.push(c.to_string());
                            }
                        }
                    }
                    SummarySpec {
                        bins,
                        range: None,
                        categories: Some(cats),
                    }
                }
            };
            let mut r = summarize_values(&col.name, col.kind, &real_vals, &spec)?;
            let mut sy = summarize_values(&col.name, col.kind, &synth_vals, &spec)?;
            r.values = None;
            sy.values = None;
            let delta = compare(&r, &sy)?;
            columns.push(ColumnHistogram {
                column: col.name.clone(),
                real: r,
                synthetic: sy,
                delta,
            });
        }
        out.push(ProductHistograms {
            preset,
            product: p.clone(),
            columns,
        });
    }
    Ok(out)
}
