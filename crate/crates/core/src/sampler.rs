//! Conditional generation: condition specs (base product plus overrides),
//! i.i.d. synthetic rows, and distribution summaries for what-if comparison.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::grad::Matrix;
use crate::model::ModelParams;
use crate::schema::{ColumnKind, ColumnRole, ColumnSpec, Schema, Value};
use crate::stream_rng;
use crate::transform::{ColumnTransform, SamplingPolicy, TransformBundle};

/// Rows decoded together; kernels are row-independent so the chunk size never
/// changes results.
const GENERATE_CHUNK: usize = 256;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub base: BTreeMap<String, Value>,
    pub overrides: BTreeMap<String, Value>,
}

impl ConditionSpec {
    /// Base values overwritten by overrides.
    pub fn merged(&self) -> BTreeMap<String, Value> {
        let mut m = self.base.clone();
        m.extend(self.overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        m
    }
}

/// Coerces a value to a column's kind: numbers named for discrete columns
/// become their text form, text for continuous columns is parsed.
pub fn coerce_value(spec: &ColumnSpec, value: &Value) -> Result<Value> {
    match (spec.kind, value) {
        (ColumnKind::Continuous, Value::Num(v)) if v.is_finite() => Ok(Value::Num(*v)),
        (ColumnKind::Continuous, Value::Num(_)) => {
            Err(Error::Argument(format!("`{}`: value must be finite", spec.name)))
        }
        (ColumnKind::Continuous, Value::Cat(s)) => {
            Value::parse_as(ColumnKind::Continuous, s).map_err(|m| Error::Argument(format!("`{}`: {m}", spec.name)))
        }
        (ColumnKind::Discrete, Value::Cat(s)) => Ok(Value::Cat(s.clone())),
        (ColumnKind::Discrete, v @ Value::Num(_)) => Ok(Value::Cat(v.to_string())),
    }
}

fn condition_column<'a>(schema: &'a Schema, name: &str, what: &str) -> Result<&'a ColumnSpec> {
    match schema.column(name) {
        Some(c) if c.role == ColumnRole::Condition => Ok(c),
        Some(_) => Err(Error::Argument(format!("{what} `{name}` is not a condition column"))),
        None => Err(Error::Argument(format!("{what} `{name}` is not a known column"))),
    }
}

/// Merges `base` with `overrides` and encodes the result as `x_c`.
pub fn build_condition(
    bundle: &TransformBundle,
    base: &BTreeMap<String, Value>,
    overrides: &BTreeMap<String, Value>,
) -> Result<(ConditionSpec, Vec<f64>)> {
    let schema = bundle.schema();
    let mut spec = ConditionSpec::default();
    for (k, v) in base {
        let col = condition_column(schema, k, "base column")?;
        spec.base.insert(k.clone(), coerce_value(col, v)?);
    }
    for (_, col) in schema.conditions() {
        if !spec.base.contains_key(&col.name) {
            return Err(Error::Argument(format!("base is missing condition column `{}`", col.name)));
        }
    }
    for (k, v) in overrides {
        let col = condition_column(schema, k, "override")?;
        spec.overrides.insert(k.clone(), coerce_value(col, v)?);
    }
    let rc = bundle.encode_condition(&spec.merged())?;
    Ok((spec, rc))
}

/// Parses `name=value` override arguments.
pub fn parse_overrides<S: AsRef<str>>(args: &[S]) -> Result<BTreeMap<String, Value>> {
    args.iter()
        .map(|a| {
            let a = a.as_ref();
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override `{a}` is not of the form name=value")))?;
            Ok((k.trim().to_string(), Value::Cat(v.to_string())))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub condition: ConditionSpec,
    pub seed: u64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBatch {
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Provenance,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Argument(format!("`{name}` is not a target column of this batch")))
    }

    /// CSV with the target columns as header, one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Draws `n` rows from the model under `condition`. Row `i` uses its own
/// random stream `(seed, i)`, so a smaller `n` is a prefix of a larger one.
pub fn generate(
    model: &ModelParams,
    condition: &ConditionSpec,
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<SyntheticBatch> {
    let bundle = model.bundle();
    let rc = bundle.encode_condition(&condition.merged())?;
    let rows = generate_encoded(model, &rc, n, seed, execution)?;
    Ok(SyntheticBatch {
        columns: bundle.schema().targets().map(|(_, c)| c.clone()).collect(),
        rows,
        provenance: Provenance {
            model: model.fingerprint(),
            condition: condition.clone(),
            seed,
            n,
        },
    })
}

/// Generation from an already-encoded condition vector.
pub fn generate_encoded(
    model: &ModelParams,
    rc: &[f64],
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Vec<Value>>> {
    let bundle = model.bundle();
    if rc.len() != bundle.condition_dim() {
        return Err(Error::Contract(format!(
            "condition vector width {} != {}",
            rc.len(),
            bundle.condition_dim()
        )));
    }
    let latent = model.arch().latent_dim;
    let chunks = n.div_ceil(GENERATE_CHUNK);
    let parts = try_map_indexed(execution, chunks, |c| -> Result<Vec<Vec<Value>>> {
        let start = c * GENERATE_CHUNK;
        let end = (start + GENERATE_CHUNK).min(n);
        let mut rngs: Vec<_> = (start..end).map(|i| stream_rng(seed, i as u64)).collect();
        let mut z = Matrix::zeros(end - start, latent);
        for (r, rng) in rngs.iter_mut().enumerate() {
            for v in z.row_mut(r) {
                *v = rng.sample(StandardNormal);
            }
        }
        let cond = Matrix::from_rows(&vec![rc.to_vec(); end - start])?;
        let raw = model.decode_raw_batch(&z, &cond)?;
        rngs.iter_mut()
            .enumerate()
            .map(|(r, rng)| {
                let blocks = bundle.output_blocks(raw.row(r), model.log_spreads())?;
                bundle.decode_target(&blocks, SamplingPolicy::Stochastic, rng)
            })
            .collect()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// How to tabulate one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarySpec {
    /// Equal-width bins for continuous columns.
    pub bins: usize,
    /// Bin range; the observed range of the values when absent.
    pub range: Option<(f64, f64)>,
    /// Category universe; the observed categories when absent.
    pub categories: Option<Vec<String>>,
}

impl Default for SummarySpec {
    fn default() -> Self {
        Self {
            bins: 10,
            range: None,
            categories: None,
        }
    }
}

impl SummarySpec {
    /// Bins over the column's training range, or its full training vocabulary.
    pub fn for_column(bundle: &TransformBundle, column: &str, bins: usize) -> Result<Self> {
        let j = bundle
            .schema()
            .index_of(column)
            .ok_or_else(|| Error::Argument(format!("unknown column `{column}`")))?;
        Ok(match bundle.transform(j) {
            ColumnTransform::Continuous(t) => Self {
                bins,
                range: Some(t.range),
                categories: None,
            },
            ColumnTransform::Discrete(t) => Self {
                bins,
                range: None,
                categories: Some(t.vocabulary().to_vec()),
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub column: String,
    pub kind: ColumnKind,
    /// Category names, or `[lo, hi)` bin labels.
    pub labels: Vec<String>,
    pub frequencies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

fn bin_edges(bins: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

/// Tabulates `values` of one column into relative frequencies.
pub fn summarize_values(column: &str, kind: ColumnKind, values: &[Value], spec: &SummarySpec) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Argument(format!("no values to summarize for `{column}`")));
    }
    let n = values.len() as f64;
    match kind {
        ColumnKind::Discrete => {
            let cats: Vec<&str> = values
                .iter()
                .map(|v| v.as_cat().ok_or_else(|| Error::Contract(format!("`{column}` holds a number"))))
                .collect::<Result<_>>()?;
            let labels = match &spec.categories {
                Some(c) => c.clone(),
                None => {
                    let mut c: Vec<String> = cats.iter().map(|s| s.to_string()).collect();
                    c.sort();
                    c.dedup();
                    c
                }
            };
            let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let mut counts = vec![0usize; labels.len()];
            for c in cats {
                let i = index
                    .get(c)
                    .ok_or_else(|| Error::Argument(format!("`{column}`: category `{c}` is outside the summary categories")))?;
                counts[*i] += 1;
            }
            Ok(DistributionSummary {
                column: column.to_string(),
                kind,
                labels,
                frequencies: counts.into_iter().map(|c| c as f64 / n).collect(),
                edges: None,
                values: None,
            })
        }
        ColumnKind::Continuous => {
            if spec.bins == 0 {
                return Err(Error::Argument("bins must be at least 1".into()));
            }
            let xs: Vec<f64> = values
                .iter()
                .map(|v| v.as_num().ok_or_else(|| Error::Contract(format!("`{column}` holds text"))))
                .collect::<Result<_>>()?;
            let range = spec.range.unwrap_or_else(|| {
                (
                    xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            });
            let edges = bin_edges(spec.bins, range);
            let (lo, hi) = (edges[0], edges[spec.bins]);
            let width = (hi - lo) / spec.bins as f64;
            let mut counts = vec![0usize; spec.bins];
            for &x in &xs {
                // Values beyond the range fall in the end bins; the last bin is closed.
                let b = ((x - lo) / width).floor();
                let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(spec.bins - 1) };
                counts[b] += 1;
            }
            Ok(DistributionSummary {
                column: column.to_string(),
                kind,
                labels: edges.windows(2).map(|w| format!("[{}, {})", w[0], w[1])).collect(),
                frequencies: counts.into_iter().map(|c| c as f64 / n).collect(),
                edges: Some(edges),
                values: Some(xs),
            })
        }
    }
}

pub fn summarize(batch: &SyntheticBatch, column: &str, spec: &SummarySpec) -> Result<DistributionSummary> {
    let j = batch.column_index(column)?;
    let values: Vec<Value> = batch.rows.iter().map(|r| r[j].clone()).collect();
    summarize_values(column, batch.columns[j].kind, &values, spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionDelta {
    pub column: String,
    pub labels: Vec<String>,
    /// `b − a` per label.
    pub deltas: Vec<f64>,
}

pub fn compare(a: &DistributionSummary, b: &DistributionSummary) -> Result<DistributionDelta> {
    if a.column != b.column || a.kind != b.kind {
        return Err(Error::Argument(format!("cannot compare `{}` with `{}`", a.column, b.column)));
    }
    if a.labels != b.labels || a.edges != b.edges {
        return Err(Error::Argument(format!("`{}`: category or bin sets differ", a.column)));
    }
    Ok(DistributionDelta {
        column: a.column.clone(),
        labels: a.labels.clone(),
        deltas: a.frequencies.iter().zip(&b.frequencies).map(|(x, y)| y - x).collect(),
    })
}
