//! Mode-specific normalization.
//!
//! A continuous value `v` is encoded against a fitted Gaussian mixture as
//! `(α, onehot(k))` with `α = (v − μ_k) / (4σ_k)` clamped to `[−1, 1]`.
//! Discrete values become a one-hot over the column vocabulary. The per-column
//! encodings are concatenated into `r_s` (targets) and `r_c` (conditions).

mod gmm;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use gmm::{GaussianMixture, MixtureFitOptions};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::schema::{ColumnKind, ColumnRole, Dataset, Schema, Value};

/// How the mode of a continuous value is picked when encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    /// Sample k with probability proportional to π_k·N(v; μ_k, σ_k²).
    Sample,
    /// Take the component with the highest responsibility.
    MostLikely,
}

/// How decoder outputs are turned into concrete values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// Categories and modes drawn from their softmax; α drawn from N(mean, spread²).
    #[default]
    Stochastic,
    /// Argmax categories and modes; α at its mean.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTransform {
    pub mixture: GaussianMixture,
    /// Observed (min, max) of the fitting data.
    pub range: (f64, f64),
}

impl ContinuousTransform {
    pub fn new(mixture: GaussianMixture, range: (f64, f64)) -> Self {
        Self { mixture, range }
    }

    pub fn encoded_width(&self) -> usize {
        1 + self.mixture.component_count()
    }

    pub fn alpha(&self, value: f64, mode: usize) -> f64 {
        let m = &self.mixture;
        ((value - m.means()[mode]) / (4.0 * m.stds()[mode])).clamp(-1.0, 1.0)
    }

    pub fn select_mode<R: Rng + ?Sized>(&self, value: f64, selection: ModeSelection, rng: &mut R) -> usize {
        let resp = self.mixture.responsibilities(value);
        match selection {
            ModeSelection::MostLikely => argmax(&resp),
            ModeSelection::Sample => sample_categorical(&resp, rng),
        }
    }

    /// Encodes `value` as `(α, onehot(k))`, writing `encoded_width()` entries.
    pub fn encode_into<R: Rng + ?Sized>(
        &self,
        value: f64,
        selection: ModeSelection,
        rng: &mut R,
        out: &mut [f64],
    ) -> usize {
        let k = self.select_mode(value, selection, rng);
        out[0] = self.alpha(value, k);
        out[1..self.encoded_width()].iter_mut().for_each(|x| *x = 0.0);
        out[1 + k] = 1.0;
        k
    }

    pub fn encode<R: Rng + ?Sized>(&self, value: f64, selection: ModeSelection, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_width()];
        self.encode_into(value, selection, rng, &mut out);
        out
    }

    /// Inverse transform: `α·4σ_k + μ_k` with k the argmax of `mode_selector`
    /// (a one-hot or a probability vector).
    pub fn decode(&self, alpha: f64, mode_selector: &[f64]) -> Result<f64> {
        if mode_selector.len() != self.mixture.component_count() {
            return Err(Error::Contract(format!(
                "mode selector has {} entries, mixture has {}",
                mode_selector.len(),
                self.mixture.component_count()
            )));
        }
        Ok(self.decode_mode(alpha, argmax(mode_selector)))
    }

    pub fn decode_mode(&self, alpha: f64, mode: usize) -> f64 {
        let m = &self.mixture;
        alpha * 4.0 * m.stds()[mode] + m.means()[mode]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTransform {
    vocabulary: Vec<String>,
}

impl DiscreteTransform {
    pub fn new(vocabulary: Vec<String>) -> Result<Self> {
        if vocabulary.is_empty() {
            return Err(Error::Validation("empty vocabulary".into()));
        }
        if vocabulary.iter().collect::<BTreeSet<_>>().len() != vocabulary.len() {
            return Err(Error::Validation("vocabulary entries must be unique".into()));
        }
        Ok(Self { vocabulary })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn encoded_width(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.vocabulary.iter().position(|v| v == value)
    }

    pub fn encode(&self, column: &str, value: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.encoded_width()];
        self.encode_into(column, value, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, column: &str, value: &str, out: &mut [f64]) -> Result<usize> {
        let idx = self.index_of(value).ok_or_else(|| Error::Encoding {
            column: column.to_string(),
            value: value.to_string(),
            message: "category not in the fitted vocabulary".into(),
        })?;
        out[..self.encoded_width()].iter_mut().for_each(|x| *x = 0.0);
        out[idx] = 1.0;
        Ok(idx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTransform {
    Continuous(ContinuousTransform),
    Discrete(DiscreteTransform),
}

impl ColumnTransform {
    pub fn encoded_width(&self) -> usize {
        match self {
            ColumnTransform::Continuous(t) => t.encoded_width(),
            ColumnTransform::Discrete(t) => t.encoded_width(),
        }
    }
}

/// Position of one column's encoding inside `r_s` or `r_c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    /// Index of the column in the schema.
    pub column: usize,
    pub offset: usize,
    pub width: usize,
}

/// Decoder output for one target column of one row.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputBlock {
    Continuous {
        /// Already squashed into (−1, 1).
        alpha_mean: f64,
        log_spread: f64,
        mode_logits: Vec<f64>,
    },
    Discrete {
        logits: Vec<f64>,
    },
}

/// Fitted transforms for every schema column plus the `r_s` / `r_c` layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformBundle {
    schema: Schema,
    transforms: Vec<ColumnTransform>,
    target_layout: Vec<LayoutEntry>,
    condition_layout: Vec<LayoutEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleFitOptions {
    pub mixture: MixtureFitOptions,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BundleFitOptions {
    fn default() -> Self {
        Self {
            mixture: MixtureFitOptions::default(),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TransformBundle {
    /// Assembles a bundle from already-fitted transforms. Fills in discrete
    /// vocabularies on the stored schema.
    pub fn from_parts(schema: Schema, transforms: Vec<ColumnTransform>) -> Result<Self> {
        schema.validate()?;
        if transforms.len() != schema.len() {
            return Err(Error::Contract(format!(
                "{} transforms for {} columns",
                transforms.len(),
                schema.len()
            )));
        }
        let mut schema = schema;
        let mut target_layout = Vec::new();
        let mut condition_layout = Vec::new();
        let (mut t_off, mut c_off) = (0, 0);
        for (j, (col, t)) in schema.columns.iter_mut().zip(&transforms).enumerate() {
            match (col.kind, t) {
                (ColumnKind::Continuous, ColumnTransform::Continuous(_)) => {}
                (ColumnKind::Discrete, ColumnTransform::Discrete(d)) => {
                    col.vocabulary = Some(d.vocabulary().to_vec());
                }
                _ => {
                    return Err(Error::Contract(format!(
                        "transform kind does not match column `{}`",
                        col.name
                    )))
                }
            }
            let width = t.encoded_width();
            match col.role {
                ColumnRole::Target => {
                    target_layout.push(LayoutEntry { column: j, offset: t_off, width });
                    t_off += width;
                }
                ColumnRole::Condition => {
                    condition_layout.push(LayoutEntry { column: j, offset: c_off, width });
                    c_off += width;
                }
            }
        }
        Ok(Self {
            schema,
            transforms,
            target_layout,
            condition_layout,
        })
    }

    /// Fits one transform per column on `data`. Columns are independent and
    /// may be fitted concurrently.
    pub fn fit(data: &Dataset, opts: &BundleFitOptions) -> Result<Self> {
        let schema = data.schema().clone();
        let transforms = exec::try_map_indexed(opts.execution, schema.len(), |j| -> Result<ColumnTransform> {
            let col = &schema.columns[j];
            match col.kind {
                ColumnKind::Continuous => {
                    let values: Vec<f64> = data.rows().iter().filter_map(|r| r[j].as_num()).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream(j as u64);
                    let seed = rng.gen();
                    let mixture = GaussianMixture::fit_with(&values, &opts.mixture, seed, &mut |_| {})?;
                    let range = values
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                    Ok(ColumnTransform::Continuous(ContinuousTransform::new(mixture, range)))
                }
                ColumnKind::Discrete => {
                    let vocabulary = match &col.vocabulary {
                        Some(v) => v.clone(),
                        None => data
                            .rows()
                            .iter()
                            .filter_map(|r| r[j].as_cat().map(str::to_string))
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect(),
                    };
                    Ok(ColumnTransform::Discrete(DiscreteTransform::new(vocabulary)?))
                }
            }
        })?;
        Self::from_parts(schema, transforms)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn transforms(&self) -> &[ColumnTransform] {
        &self.transforms
    }

    pub fn transform(&self, column: usize) -> &ColumnTransform {
        &self.transforms[column]
    }

    pub fn target_layout(&self) -> &[LayoutEntry] {
        &self.target_layout
    }

    pub fn condition_layout(&self) -> &[LayoutEntry] {
        &self.condition_layout
    }

    pub fn target_dim(&self) -> usize {
        self.target_layout.iter().map(|e| e.width).sum()
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_layout.iter().map(|e| e.width).sum()
    }

    pub fn target_names(&self) -> Vec<String> {
        self.target_layout
            .iter()
            .map(|e| self.schema.columns[e.column].name.clone())
            .collect()
    }

    /// Number of continuous target columns.
    pub fn continuous_target_count(&self) -> usize {
        self.target_layout
            .iter()
            .filter(|e| matches!(self.transforms[e.column], ColumnTransform::Continuous(_)))
            .count()
    }

    fn encode_value<R: Rng + ?Sized>(
        &self,
        column: usize,
        value: &Value,
        selection: ModeSelection,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        let name = &self.schema.columns[column].name;
        match (&self.transforms[column], value) {
            (ColumnTransform::Continuous(t), Value::Num(v)) if v.is_finite() => {
                t.encode_into(*v, selection, rng, out);
                Ok(())
            }
            (ColumnTransform::Discrete(t), Value::Cat(s)) => t.encode_into(name, s, out).map(|_| ()),
            _ => Err(Error::Encoding {
                column: name.clone(),
                value: value.to_string(),
                message: "value does not match the column kind".into(),
            }),
        }
    }

    /// Encodes a full schema row into `(r_s, r_c)`. Continuous targets use
    /// responsibility-proportional mode sampling; continuous conditions use the
    /// most likely mode so that condition vectors are a pure function of the
    /// condition values.
    pub fn encode_row<R: Rng + ?Sized>(&self, row: &[Value], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        if row.len() != self.schema.len() {
            return Err(Error::Contract(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.schema.len()
            )));
        }
        let mut rs = vec![0.0; self.target_dim()];
        for e in &self.target_layout {
            self.encode_value(e.column, &row[e.column], ModeSelection::Sample, rng, &mut rs[e.offset..e.offset + e.width])?;
        }
        let rc = self.encode_condition_row(row)?;
        Ok((rs, rc))
    }

    fn encode_condition_row(&self, row: &[Value]) -> Result<Vec<f64>> {
        let mut rc = vec![0.0; self.condition_dim()];
        // MostLikely never touches the rng.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for e in &self.condition_layout {
            self.encode_value(e.column, &row[e.column], ModeSelection::MostLikely, &mut rng, &mut rc[e.offset..e.offset + e.width])?;
        }
        Ok(rc)
    }

    /// Encodes a condition mapping (every condition column must be present).
    pub fn encode_condition(&self, values: &BTreeMap<String, Value>) -> Result<Vec<f64>> {
        let mut rc = vec![0.0; self.condition_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for e in &self.condition_layout {
            let name = &self.schema.columns[e.column].name;
            let v = values
                .get(name)
                .ok_or_else(|| Error::Argument(format!("missing condition column `{name}`")))?;
            self.encode_value(e.column, v, ModeSelection::MostLikely, &mut rng, &mut rc[e.offset..e.offset + e.width])?;
        }
        Ok(rc)
    }

    /// Splits a raw decoder output row (width `target_dim`) into per-column
    /// blocks. `alpha` slots are squashed with tanh here.
    pub fn output_blocks(&self, raw: &[f64], log_spreads: &[f64]) -> Result<Vec<OutputBlock>> {
        if raw.len() != self.target_dim() {
            return Err(Error::Contract(format!(
                "decoder output width {} != target layout width {}",
                raw.len(),
                self.target_dim()
            )));
        }
        let mut spreads = log_spreads.iter();
        let mut blocks = Vec::with_capacity(self.target_layout.len());
        for e in &self.target_layout {
            let slot = &raw[e.offset..e.offset + e.width];
            blocks.push(match &self.transforms[e.column] {
                ColumnTransform::Continuous(_) => OutputBlock::Continuous {
                    alpha_mean: slot[0].tanh(),
                    log_spread: *spreads.next().ok_or_else(|| {
                        Error::Contract("fewer log-spreads than continuous targets".into())
                    })?,
                    mode_logits: slot[1..].to_vec(),
                },
                ColumnTransform::Discrete(_) => OutputBlock::Discrete {
                    logits: slot.to_vec(),
                },
            });
        }
        Ok(blocks)
    }

    /// Realizes decoder blocks into target values under `policy`.
    pub fn decode_target<R: Rng + ?Sized>(
        &self,
        blocks: &[OutputBlock],
        policy: SamplingPolicy,
        rng: &mut R,
    ) -> Result<Vec<Value>> {
        if blocks.len() != self.target_layout.len() {
            return Err(Error::Contract(format!(
                "{} output blocks for {} target columns",
                blocks.len(),
                self.target_layout.len()
            )));
        }
        let mut out = Vec::with_capacity(blocks.len());
        for (e, block) in self.target_layout.iter().zip(blocks) {
            let name = &self.schema.columns[e.column].name;
            let mismatch = || Error::Contract(format!("output block does not match layout of `{name}`"));
            match (&self.transforms[e.column], block) {
                (
                    ColumnTransform::Continuous(t),
                    OutputBlock::Continuous {
                        alpha_mean,
                        log_spread,
                        mode_logits,
                    },
                ) => {
                    if mode_logits.len() != t.mixture.component_count() {
                        return Err(mismatch());
                    }
                    let (mode, alpha) = match policy {
                        SamplingPolicy::Deterministic => (argmax(mode_logits), *alpha_mean),
                        SamplingPolicy::Stochastic => {
                            let mode = sample_categorical(&softmax(mode_logits), rng);
                            let spread = log_spread.exp();
                            let alpha = Normal::new(*alpha_mean, spread)
                                .map_err(|_| Error::Numeric(format!("spread of `{name}`")))?
                                .sample(rng);
                            (mode, alpha)
                        }
                    };
                    out.push(Value::Num(t.decode_mode(alpha.clamp(-1.0, 1.0), mode)));
                }
                (ColumnTransform::Discrete(t), OutputBlock::Discrete { logits }) => {
                    if logits.len() != t.encoded_width() {
                        return Err(mismatch());
                    }
                    let idx = match policy {
                        SamplingPolicy::Deterministic => argmax(logits),
                        SamplingPolicy::Stochastic => sample_categorical(&softmax(logits), rng),
                    };
                    out.push(Value::Cat(t.vocabulary()[idx].clone()));
                }
                _ => return Err(mismatch()),
            }
        }
        Ok(out)
    }

    /// Decodes an `r_s` vector produced by [`TransformBundle::encode_row`]
    /// back into target values (exact inverse for unclamped α).
    pub fn decode_encoded_target(&self, rs: &[f64]) -> Result<Vec<Value>> {
        if rs.len() != self.target_dim() {
            return Err(Error::Contract("r_s width does not match layout".into()));
        }
        self.target_layout
            .iter()
            .map(|e| {
                let slot = &rs[e.offset..e.offset + e.width];
                match &self.transforms[e.column] {
                    ColumnTransform::Continuous(t) => t.decode(slot[0], &slot[1..]).map(Value::Num),
                    ColumnTransform::Discrete(t) => Ok(Value::Cat(t.vocabulary()[argmax(slot)].clone())),
                }
            })
            .collect()
    }
}

/// Index of the first maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // Rounding residue lands on the last positive-probability entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}
