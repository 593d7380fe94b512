//! Synthetic corpora with closed-form conditional distributions, and the
//! product catalog (condition values per product).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, ColumnRole, ColumnSpec, Dataset, Schema, Value};
use crate::stream_rng;
use crate::transform::sample_categorical;

const STREAM_PRODUCTS: u64 = 1;
const STREAM_ROWS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionColumnSpec {
    pub name: String,
    #[serde(default = "discrete")]
    pub kind: ColumnKind,
    /// Values assigned to products uniformly at random.
    pub values: Vec<Value>,
}

fn discrete() -> ColumnKind {
    ColumnKind::Discrete
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: f64,
    pub std: f64,
}

/// A target whose distribution depends only on the value of one condition
/// column (`given`). Tables are keyed by that value's text form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetColumnSpec {
    Discrete {
        name: String,
        given: String,
        categories: Vec<String>,
        probabilities: BTreeMap<String, Vec<f64>>,
    },
    Continuous {
        name: String,
        given: String,
        components: Vec<Component>,
        weights: BTreeMap<String, Vec<f64>>,
    },
}

impl TargetColumnSpec {
    pub fn name(&self) -> &str {
        match self {
            Self::Discrete { name, .. } | Self::Continuous { name, .. } => name,
        }
    }

    pub fn given(&self) -> &str {
        match self {
            Self::Discrete { given, .. } | Self::Continuous { given, .. } => given,
        }
    }

    fn table(&self) -> &BTreeMap<String, Vec<f64>> {
        match self {
            Self::Discrete { probabilities, .. } => probabilities,
            Self::Continuous { weights, .. } => weights,
        }
    }

    fn probabilities_for(&self, given_value: &Value) -> Result<&[f64]> {
        let key = given_value.to_string();
        self.table().get(&key).map(Vec::as_slice).ok_or_else(|| {
            Error::Validation(format!("target `{}` has no table entry for `{key}`", self.name()))
        })
    }

    /// One draw from the target's distribution under `given_value`.
    pub fn sample<R: Rng + ?Sized>(&self, given_value: &Value, rng: &mut R) -> Result<Value> {
        let p = self.probabilities_for(given_value)?;
        let k = sample_categorical(p, rng);
        Ok(match self {
            Self::Discrete { categories, .. } => Value::Cat(categories[k].clone()),
            Self::Continuous { components, .. } => {
                let c = components[k];
                let d = Normal::new(c.mean, c.std).map_err(|e| Error::Validation(e.to_string()))?;
                Value::Num(d.sample(rng))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub products: usize,
    /// Inclusive range of purchase rows per product.
    pub rows_per_product: (usize, usize),
    #[serde(default = "default_group_key")]
    pub group_key: String,
    pub conditions: Vec<ConditionColumnSpec>,
    pub targets: Vec<TargetColumnSpec>,
}

fn default_group_key() -> String {
    "product_id".into()
}

impl CorpusSpec {
    /// Condition `g ∈ {0, 1}` flips a binary target between 0.8/0.2 and
    /// 0.2/0.8 and shifts the weights of a bimodal continuous target. A second
    /// condition column has no effect on either target.
    pub fn flip_oracle(products: usize, rows_per_product: (usize, usize)) -> Self {
        let g = |a: Vec<f64>, b: Vec<f64>| BTreeMap::from([("0".to_string(), a), ("1".to_string(), b)]);
        Self {
            products,
            rows_per_product,
            group_key: default_group_key(),
            conditions: vec![
                ConditionColumnSpec {
                    name: "g".into(),
                    kind: ColumnKind::Discrete,
                    values: vec![Value::Cat("0".into()), Value::Cat("1".into())],
                },
                ConditionColumnSpec {
                    name: "size".into(),
                    kind: ColumnKind::Discrete,
                    values: vec![Value::Cat("small".into()), Value::Cat("large".into())],
                },
            ],
            targets: vec![
                TargetColumnSpec::Discrete {
                    name: "b".into(),
                    given: "g".into(),
                    categories: vec!["0".into(), "1".into()],
                    probabilities: g(vec![0.8, 0.2], vec![0.2, 0.8]),
                },
                TargetColumnSpec::Continuous {
                    name: "x".into(),
                    given: "g".into(),
                    components: vec![Component { mean: -2.0, std: 0.5 }, Component { mean: 2.0, std: 0.5 }],
                    weights: g(vec![0.75, 0.25], vec![0.25, 0.75]),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.products == 0 {
            return Err(Error::Validation("products must be at least 1".into()));
        }
        let (lo, hi) = self.rows_per_product;
        if lo == 0 || hi < lo {
            return Err(Error::Validation(format!(
                "rows_per_product ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::Validation("at least one target column is required".into()));
        }
        for c in &self.conditions {
            if c.values.is_empty() {
                return Err(Error::Validation(format!("condition `{}` has no values", c.name)));
            }
            for v in &c.values {
                if (c.kind == ColumnKind::Continuous) != v.as_num().is_some() {
                    return Err(Error::Validation(format!(
                        "condition `{}`: value `{v}` does not match its kind",
                        c.name
                    )));
                }
            }
        }
        for t in &self.targets {
            let cond = self
                .conditions
                .iter()
                .find(|c| c.name == t.given())
                .ok_or_else(|| Error::Validation(format!("target `{}` is given unknown column `{}`", t.name(), t.given())))?;
            let width = match t {
                TargetColumnSpec::Discrete { categories, .. } => categories.len(),
                TargetColumnSpec::Continuous { components, .. } => {
                    if components.iter().any(|c| !(c.std > 0.0 && c.mean.is_finite())) {
                        return Err(Error::Validation(format!("target `{}` has an invalid component", t.name())));
                    }
                    components.len()
                }
            };
            if width == 0 {
                return Err(Error::Validation(format!("target `{}` has no outcomes", t.name())));
            }
            for v in &cond.values {
                let p = t.probabilities_for(v)?;
                let sum: f64 = p.iter().sum();
                if p.len() != width || p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "target `{}`: entry for `{v}` is not a distribution over {width} outcomes",
                        t.name()
                    )));
                }
            }
        }
        self.schema()?;
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        let mut cols: Vec<ColumnSpec> = self
            .targets
            .iter()
            .map(|t| {
                let kind = match t {
                    TargetColumnSpec::Discrete { .. } => ColumnKind::Discrete,
                    TargetColumnSpec::Continuous { .. } => ColumnKind::Continuous,
                };
                ColumnSpec::new(t.name(), kind, ColumnRole::Target)
            })
            .collect();
        cols.extend(self.conditions.iter().map(|c| ColumnSpec::new(&c.name, c.kind, ColumnRole::Condition)));
        Schema::new(&self.group_key, cols)
    }

    /// Draws `n` target rows (schema target order) from the ground truth under
    /// the given condition values.
    pub fn sample_targets<R: Rng + ?Sized>(
        &self,
        condition: &BTreeMap<String, Value>,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Value>>> {
        let given: Vec<&Value> = self
            .targets
            .iter()
            .map(|t| {
                condition
                    .get(t.given())
                    .ok_or_else(|| Error::Argument(format!("condition `{}` is missing", t.given())))
            })
            .collect::<Result<_>>()?;
        (0..n)
            .map(|_| self.targets.iter().zip(&given).map(|(t, g)| t.sample(g, rng)).collect())
            .collect()
    }
}

/// A generated corpus together with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub seed: u64,
    pub data: Dataset,
    pub catalog: Catalog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: CorpusSpec,
    pub seed: u64,
    pub products: BTreeMap<String, BTreeMap<String, Value>>,
}

pub fn make_synthetic_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let schema = spec.schema()?;
    let width = (spec.products - 1).to_string().len();
    let mut prng = stream_rng(seed, STREAM_PRODUCTS);
    let mut products = BTreeMap::new();
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for p in 0..spec.products {
        let id = format!("P{p:0width$}");
        let cond: BTreeMap<String, Value> = spec
            .conditions
            .iter()
            .map(|c| (c.name.clone(), c.values[prng.gen_range(0..c.values.len())].clone()))
            .collect();
        let n = prng.gen_range(spec.rows_per_product.0..=spec.rows_per_product.1);
        let mut rrng = stream_rng(seed, STREAM_ROWS + p as u64);
        for targets in spec.sample_targets(&cond, n, &mut rrng)? {
            let mut row = targets;
            row.extend(spec.conditions.iter().map(|c| cond[&c.name].clone()));
            rows.push(row);
            groups.push(id.clone());
        }
        products.insert(id, cond);
    }
    let data = Dataset::new(schema.clone(), rows, groups)?;
    Ok(Corpus {
        spec: spec.clone(),
        seed,
        data,
        catalog: Catalog::new(schema, products)?,
    })
}

impl Corpus {
    pub fn truth(&self) -> Truth {
        Truth {
            spec: self.spec.clone(),
            seed: self.seed,
            products: self.catalog.products().clone(),
        }
    }

    /// Writes `corpus.csv`, `schema.json`, `truth.json` and `catalog.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.data.save_csv(dir.join("corpus.csv"))?;
        self.data.schema().save(dir.join("schema.json"))?;
        let truth = serde_json::to_string_pretty(&self.truth())?;
        let path = dir.join("truth.json");
        std::fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
        self.catalog.save_csv(dir.join("catalog.csv"))
    }
}

/// Condition values per product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    group_key: String,
    condition_columns: Vec<ColumnSpec>,
    products: BTreeMap<String, BTreeMap<String, Value>>,
}

impl Catalog {
    pub fn new(schema: Schema, products: BTreeMap<String, BTreeMap<String, Value>>) -> Result<Self> {
        let condition_columns: Vec<ColumnSpec> = schema.conditions().map(|(_, c)| c.clone()).collect();
        for (id, values) in &products {
            for c in &condition_columns {
                if !values.contains_key(&c.name) {
                    return Err(Error::Validation(format!("product `{id}` lacks condition `{}`", c.name)));
                }
            }
        }
        Ok(Self {
            group_key: schema.group_key.clone(),
            condition_columns,
            products,
        })
    }

    /// Condition values of each product, taken from its first row.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let schema = data.schema();
        let mut products = BTreeMap::new();
        for (i, row) in data.rows().iter().enumerate() {
            products.entry(data.group(i).to_string()).or_insert_with(|| {
                schema
                    .conditions()
                    .map(|(j, c)| (c.name.clone(), row[j].clone()))
                    .collect::<BTreeMap<_, _>>()
            });
        }
        Self::new(schema.clone(), products)
    }

    pub fn products(&self) -> &BTreeMap<String, BTreeMap<String, Value>> {
        &self.products
    }

    pub fn get(&self, product: &str) -> Option<&BTreeMap<String, Value>> {
        self.products.get(product)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.group_key.as_str()];
        header.extend(self.condition_columns.iter().map(|c| c.name.as_str()));
        w.write_record(&header)?;
        for (id, values) in &self.products {
            let mut rec = vec![id.clone()];
            rec.extend(self.condition_columns.iter().map(|c| values[&c.name].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a catalog whose header is the group key followed by every
    /// condition column of `schema` (any order).
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let key_at = header
            .iter()
            .position(|h| *h == schema.group_key)
            .ok_or_else(|| Error::Header(format!("catalog lacks the `{}` column", schema.group_key)))?;
        let mut cols = Vec::new();
        for (_, c) in schema.conditions() {
            let at = header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::Header(format!("catalog lacks condition column `{}`", c.name)))?;
            cols.push((at, c));
        }
        if header.len() != cols.len() + 1 {
            return Err(Error::Header("catalog has columns that are not condition columns".into()));
        }
        let mut products = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut values = BTreeMap::new();
            for &(at, c) in &cols {
                let text = rec.get(at).unwrap_or("");
                let v = Value::parse_as(c.kind, text).map_err(|message| Error::Cell {
                    row: i + 1,
                    column: c.name.clone(),
                    value: text.to_string(),
                    message,
                })?;
                values.insert(c.name.clone(), v);
            }
            products.insert(rec.get(key_at).unwrap_or("").to_string(), values);
        }
        Self::new(schema.clone(), products)
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema)
    }
}
