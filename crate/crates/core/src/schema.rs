//! Tabular data model: column metadata, the row table, CSV ingestion and the
//! product-level holdout splits.
//!
//! A [`Dataset`] keeps the group key (the product identifier) beside the
//! modeled columns rather than as one of them: it partitions rows for the
//! holdout protocol but is never fed to the network.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// Synthesized by the generator (consumer attributes).
    Target,
    /// Fixed or overridden at generation time (product attributes).
    Condition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    /// Fixed category order for discrete columns. When absent the order is
    /// learned from data when transforms are fitted.
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
            vocabulary: None,
        }
    }
}

/// Ordered column list plus the name of the column identifying each row's product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub group_key: String,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(group_key: impl Into<String>, columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self {
            group_key: group_key.into(),
            columns,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Validation("schema has no columns".into()));
        }
        if self.group_key.trim().is_empty() {
            return Err(Error::Validation("group_key is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for col in &self.columns {
            if col.name.trim().is_empty() {
                return Err(Error::Validation("column with empty name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Validation(format!("duplicate column name `{}`", col.name)));
            }
            if col.name == self.group_key {
                return Err(Error::Validation(format!(
                    "group key `{}` must not also be a modeled column",
                    col.name
                )));
            }
            match (&col.kind, &col.vocabulary) {
                (ColumnKind::Continuous, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "continuous column `{}` cannot declare a vocabulary",
                        col.name
                    )))
                }
                (ColumnKind::Discrete, Some(v)) => {
                    if v.is_empty() {
                        return Err(Error::Validation(format!(
                            "discrete column `{}` has an empty vocabulary",
                            col.name
                        )));
                    }
                    let unique: BTreeSet<_> = v.iter().collect();
                    if unique.len() != v.len() {
                        return Err(Error::Validation(format!(
                            "discrete column `{}` has duplicate vocabulary entries",
                            col.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn targets(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Target)
    }

    pub fn conditions(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Condition)
    }

    pub fn target_count(&self) -> usize {
        self.targets().count()
    }

    pub fn condition_count(&self) -> usize {
        self.conditions().count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawColumn {
    name: Option<String>,
    kind: Option<String>,
    role: Option<String>,
    #[serde(default)]
    vocabulary: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    group_key: Option<String>,
    columns: Option<Vec<RawColumn>>,
}

/// Parses a schema document (see [`load_schema`]) from text.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let raw: RawSchema = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "schema".into(),
        message: e.to_string(),
    })?;
    let missing = |field: &str| Error::Parse {
        context: "schema".into(),
        message: format!("missing field `{field}`"),
    };
    let group_key = raw.group_key.ok_or_else(|| missing("group_key"))?;
    let raw_columns = raw.columns.ok_or_else(|| missing("columns"))?;
    let mut columns = Vec::with_capacity(raw_columns.len());
    for (i, rc) in raw_columns.into_iter().enumerate() {
        let field_err = |field: &str, msg: String| Error::Parse {
            context: "schema".into(),
            message: format!("columns[{i}].{field}: {msg}"),
        };
        let name = rc.name.ok_or_else(|| field_err("name", "missing".into()))?;
        let kind = match rc.kind.as_deref() {
            Some("continuous") => ColumnKind::Continuous,
            Some("discrete") => ColumnKind::Discrete,
            Some(other) => {
                return Err(field_err(
                    "kind",
                    format!("expected \"continuous\" or \"discrete\", got {other:?}"),
                ))
            }
            None => return Err(field_err("kind", "missing".into())),
        };
        let role = match rc.role.as_deref() {
            Some("target") => ColumnRole::Target,
            Some("condition") => ColumnRole::Condition,
            Some(other) => {
                return Err(field_err(
                    "role",
                    format!("expected \"target\" or \"condition\", got {other:?}"),
                ))
            }
            None => return Err(field_err("role", "missing".into())),
        };
        columns.push(ColumnSpec {
            name,
            kind,
            role,
            vocabulary: rc.vocabulary,
        });
    }
    Schema::new(group_key, columns)
}

/// Loads a JSON schema file: `{"group_key": ..., "columns": [{"name", "kind", "role"}]}`.
pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

/// A single cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            Value::Num(_) => None,
        }
    }

    /// Interprets raw text according to the column kind.
    pub fn parse_as(kind: ColumnKind, text: &str) -> std::result::Result<Value, String> {
        match kind {
            ColumnKind::Continuous => {
                let t = text.trim();
                if t.is_empty() {
                    return Err("missing value".into());
                }
                let v: f64 = t.parse().map_err(|_| "not a number".to_string())?;
                if !v.is_finite() {
                    return Err("not finite".into());
                }
                Ok(Value::Num(v))
            }
            ColumnKind::Discrete => {
                if text.is_empty() {
                    Err("missing value".into())
                } else {
                    Ok(Value::Cat(text.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{}` on f64 prints the shortest string that parses back exactly.
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// The row table: every row holds one value per schema column, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Vec<Value>>,
    groups: Vec<String>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>, groups: Vec<String>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if rows.len() != groups.len() {
            return Err(Error::Validation(format!(
                "{} rows but {} group ids",
                rows.len(),
                groups.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Validation(format!(
                    "row {} has {} values, schema has {} columns",
                    i + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (col, v) in schema.columns.iter().zip(row) {
                let ok = match (col.kind, v) {
                    (ColumnKind::Continuous, Value::Num(x)) => x.is_finite(),
                    (ColumnKind::Discrete, Value::Cat(_)) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Validation(format!(
                        "row {}: value {v} does not fit {:?} column `{}`",
                        i + 1,
                        col.kind,
                        col.name
                    )));
                }
            }
        }
        Ok(Self {
            schema,
            rows,
            groups,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Value] {
        &self.rows[i]
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> &str {
        &self.groups[i]
    }

    /// N.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Value> {
        self.schema.index_of(column).map(|j| &self.rows[row][j])
    }

    /// All values of one column, in row order.
    pub fn column_values(&self, column: usize) -> Vec<Value> {
        self.rows.iter().map(|r| r[column].clone()).collect()
    }

    /// Distinct group ids, sorted.
    pub fn distinct_groups(&self) -> Vec<String> {
        self.groups
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Builds a dataset from a subset of row indices (kept in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let groups = indices.iter().map(|&i| self.groups[i].clone()).collect();
        Dataset::new(self.schema.clone(), rows, groups)
    }

    /// Rows belonging to one group.
    pub fn group_subset(&self, group: &str) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.groups[i] == group).collect();
        if idx.is_empty() {
            return Err(Error::Argument(format!("unknown group `{group}`")));
        }
        self.select(&idx)
    }

    /// Writes the table as CSV with the group key as the first column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.schema.group_key.clone()];
        header.extend(self.schema.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (row, group) in self.rows.iter().zip(&self.groups) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(group.clone());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a CSV table whose header names exactly the schema columns plus the
/// group key, in any order.
pub fn read_table<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if position.insert(h, i).is_some() {
            return Err(Error::Header(format!("duplicate header column `{h}`")));
        }
    }
    let group_pos = *position
        .get(schema.group_key.as_str())
        .ok_or_else(|| Error::Header(format!("missing group key column `{}`", schema.group_key)))?;
    let mut col_pos = Vec::with_capacity(schema.len());
    for col in &schema.columns {
        let p = position
            .get(col.name.as_str())
            .ok_or_else(|| Error::Header(format!("missing column `{}`", col.name)))?;
        col_pos.push(*p);
    }
    if header.len() != schema.len() + 1 {
        let known: BTreeSet<&str> = schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .chain(std::iter::once(schema.group_key.as_str()))
            .collect();
        let extra: Vec<&str> = header.iter().filter(|h| !known.contains(h)).collect();
        return Err(Error::Header(format!("unknown columns {extra:?}")));
    }

    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = rec?;
        let group = rec.get(group_pos).unwrap_or_default();
        if group.is_empty() {
            return Err(Error::Cell {
                row: row_no,
                column: schema.group_key.clone(),
                value: String::new(),
                message: "missing value".into(),
            });
        }
        let mut row = Vec::with_capacity(schema.len());
        for (col, &p) in schema.columns.iter().zip(&col_pos) {
            let text = rec.get(p).unwrap_or_default();
            let v = Value::parse_as(col.kind, text).map_err(|message| Error::Cell {
                row: row_no,
                column: col.name.clone(),
                value: text.to_string(),
                message,
            })?;
            row.push(v);
        }
        rows.push(row);
        groups.push(group.to_string());
    }
    Dataset::new(schema.clone(), rows, groups)
}

/// Loads a UTF-8 CSV file against `schema`.
pub fn ingest_table(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(std::io::BufReader::new(file), schema)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

impl SplitResult {
    pub fn test_groups(&self) -> Vec<String> {
        self.test.distinct_groups()
    }

    pub fn train_groups(&self) -> Vec<String> {
        self.train.distinct_groups()
    }
}

/// Assigns `test_group_count` whole groups, chosen uniformly without
/// replacement, to the test side. Row order is preserved on both sides.
pub fn split_by_group(data: &Dataset, test_group_count: usize, seed: u64) -> Result<SplitResult> {
    let groups = data.distinct_groups();
    if test_group_count == 0 || test_group_count >= groups.len() {
        return Err(Error::Argument(format!(
            "test_group_count must be in 1..{} (got {test_group_count})",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<&str> = sample(&mut rng, groups.len(), test_group_count)
        .into_iter()
        .map(|i| groups[i].as_str())
        .collect();
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| chosen.contains(data.group(i)));
    Ok(SplitResult {
        train: data.select(&train_idx)?,
        test: data.select(&test_idx)?,
        seed,
    })
}

/// Row-level random split; the validation side has `round(fraction * N)` rows.
pub fn validation_split(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = train.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "validation split needs at least 2 rows, got {n}"
        )));
    }
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_idx = sample(&mut rng, n, n_val).into_vec();
    val_idx.sort_unstable();
    let val_set: BTreeSet<usize> = val_idx.iter().copied().collect();
    let fit_idx: Vec<usize> = (0..n).filter(|i| !val_set.contains(i)).collect();
    Ok((train.select(&fit_idx)?, train.select(&val_idx)?))
}
