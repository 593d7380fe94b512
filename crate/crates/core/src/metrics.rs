//! Distribution-similarity scores: KS and TV complements per column, their
//! per-product mean, and purchase-weighted aggregation across products.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, ColumnSpec, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    pub kind: ColumnKind,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductScore {
    pub product: String,
    pub columns: Vec<ColumnScore>,
    pub mc: f64,
    pub purchase_count: usize,
}

impl ProductScore {
    /// Builds a score whose `mc` is the mean of `columns`.
    pub fn from_columns(product: impl Into<String>, columns: Vec<ColumnScore>, purchase_count: usize) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Argument("a product score needs at least one column".into()));
        }
        let mc = columns.iter().map(|c| c.score).sum::<f64>() / columns.len() as f64;
        Ok(Self {
            product: product.into(),
            columns,
            mc,
            purchase_count,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub average_mc: f64,
    pub weighted_average_mc: f64,
}

/// `1 − sup_t |F_real(t) − F_synth(t)|` with right-continuous ECDFs, evaluated
/// exactly at every sample point.
pub fn ks_complement(real: &[f64], synth: &[f64]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Argument("ks_complement needs two nonempty samples".into()));
    }
    if real.iter().chain(synth).any(|v| !v.is_finite()) {
        return Err(Error::Argument("ks_complement needs finite values".into()));
    }
    let mut a = real.to_vec();
    let mut b = synth.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() || j < b.len() {
        // Next breakpoint; consume every copy of it from both sides.
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == t {
            i += 1;
        }
        while j < b.len() && b[j] == t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok((1.0 - sup).clamp(0.0, 1.0))
}

/// Normalized histogram over the given values.
pub fn histogram<S: AsRef<str>>(values: &[S]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.as_ref().to_string()).or_default() += 1;
    }
    let n = values.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect()
}

/// `1 − ½ Σ |h_real − h_synth|` over the union of observed categories.
pub fn tv_complement<S: AsRef<str>, T: AsRef<str>>(real: &[S], synth: &[T]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Argument("tv_complement needs two nonempty samples".into()));
    }
    let hr = histogram(real);
    let hs = histogram(synth);
    let mut total = 0.0;
    for (k, p) in &hr {
        total += (p - hs.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in &hs {
        if !hr.contains_key(k) {
            total += q;
        }
    }
    Ok((1.0 - 0.5 * total).clamp(0.0, 1.0))
}

fn numeric_column(rows: &[Vec<Value>], j: usize, column: &str) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| match r.get(j) {
            Some(Value::Num(v)) => Ok(*v),
            Some(other) => Err(Error::Contract(format!(
                "column '{column}' is continuous but holds '{other}'"
            ))),
            None => Err(Error::Contract(format!("row is missing column '{column}'"))),
        })
        .collect()
}

fn categorical_column<'a>(rows: &'a [Vec<Value>], j: usize, column: &str) -> Result<Vec<&'a str>> {
    rows.iter()
        .map(|r| match r.get(j) {
            Some(Value::Cat(s)) => Ok(s.as_str()),
            Some(other) => Err(Error::Contract(format!(
                "column '{column}' is discrete but holds '{other}'"
            ))),
            None => Err(Error::Contract(format!("row is missing column '{column}'"))),
        })
        .collect()
}

/// Scores one column: KS complement when continuous, TV complement when discrete.
pub fn column_score(spec: &ColumnSpec, j: usize, real: &[Vec<Value>], synth: &[Vec<Value>]) -> Result<ColumnScore> {
    let score = match spec.kind {
        ColumnKind::Continuous => ks_complement(
            &numeric_column(real, j, &spec.name)?,
            &numeric_column(synth, j, &spec.name)?,
        )?,
        ColumnKind::Discrete => tv_complement(
            &categorical_column(real, j, &spec.name)?,
            &categorical_column(synth, j, &spec.name)?,
        )?,
    };
    Ok(ColumnScore {
        column: spec.name.clone(),
        kind: spec.kind,
        score,
    })
}

/// Per-product mean complement. `real` and `synth` rows are aligned with
/// `columns` (target columns only).
pub fn mean_complement(
    product: &str,
    columns: &[ColumnSpec],
    real: &[Vec<Value>],
    synth: &[Vec<Value>],
) -> Result<ProductScore> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Argument(format!(
            "product '{product}': real and synthetic rows must be nonempty"
        )));
    }
    let scores = columns
        .iter()
        .enumerate()
        .map(|(j, spec)| column_score(spec, j, real, synth))
        .collect::<Result<Vec<_>>>()?;
    ProductScore::from_columns(product, scores, real.len())
}

/// Unweighted and purchase-weighted means of the products' MC values.
pub fn aggregate(scores: &[ProductScore]) -> Result<AggregateScore> {
    if scores.is_empty() {
        return Err(Error::Argument("aggregate needs at least one product score".into()));
    }
    let total: usize = scores.iter().map(|s| s.purchase_count).sum();
    if total == 0 {
        return Err(Error::Argument("total purchase count is zero".into()));
    }
    let average_mc = scores.iter().map(|s| s.mc).sum::<f64>() / scores.len() as f64;
    let weighted_average_mc =
        scores.iter().map(|s| s.purchase_count as f64 * s.mc).sum::<f64>() / total as f64;
    Ok(AggregateScore {
        average_mc,
        weighted_average_mc,
    })
}
