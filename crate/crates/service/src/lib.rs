//! JSON-over-HTTP what-if service over a trained model.
//!
//! Endpoints: `GET /health`, `GET /schema`, `GET /products`, `POST /whatif`,
//! `POST /generate`. The model is loaded once and shared read-only.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctvae_core::experiment::Catalog;
use ctvae_core::model::{load_model, ModelParams};
use ctvae_core::sampler::{
    coerce_value, compare, generate, summarize, ConditionSpec, DistributionDelta, DistributionSummary, SummarySpec,
    SyntheticBatch,
};
use ctvae_core::schema::{ColumnKind, ColumnRole, Value};
use ctvae_core::transform::ColumnTransform;
use ctvae_core::Execution;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub const DEFAULT_MAX_N: usize = 50_000;
const DEFAULT_BINS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot load model: {0}")]
    Model(#[source] ctvae_core::Error),
    #[error("cannot load catalog: {0}")]
    Catalog(#[source] ctvae_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

/// Immutable state shared by every request.
pub struct AppState {
    model: ModelParams,
    model_id: String,
    catalog: Option<Catalog>,
    max_n: usize,
}

impl AppState {
    pub fn new(model: ModelParams, catalog: Option<Catalog>, max_n: usize) -> Self {
        let model_id = model.fingerprint();
        Self {
            model,
            model_id,
            catalog,
            max_n,
        }
    }

    /// Loads the model file and optional catalog CSV.
    pub fn load(model: impl AsRef<Path>, catalog: Option<&Path>, max_n: usize) -> Result<Self, ServiceError> {
        let model = load_model(model).map_err(ServiceError::Model)?;
        let catalog = catalog
            .map(|p| Catalog::load_csv(p, model.bundle().schema()))
            .transpose()
            .map_err(ServiceError::Catalog)?;
        Ok(Self::new(model, catalog, max_n))
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    /// Fingerprint of the served model.
    pub fn model_id(&self) -> &str {
        &self.model_id
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/products", get(products))
        .route("/whatif", post(whatif))
        .route("/generate", post(generate_csv))
        .with_state(state)
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> Result<(), ServiceError> {
    axum::serve(listener, router(state)).await.map_err(ServiceError::Serve)
}

/// Loads everything, then binds; load failures surface before any port is taken.
pub async fn run(model: &Path, catalog: Option<&Path>, addr: &str, max_n: usize) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(model, catalog, max_n)?);
    let listener = bind(addr).await?;
    serve(listener, state).await
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Path of the offending request field, e.g. `overrides.flavor`.
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, field: Option<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field,
            },
        }
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", Some(field.into()), message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

// ---------------------------------------------------------------------------
// Schema and catalog

#[derive(Debug, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub role: ColumnRole,
    pub kind: ColumnKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub model: String,
    pub group_key: String,
    pub columns: Vec<ColumnInfo>,
    pub max_n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProductEntry {
    pub id: String,
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProductsResponse {
    pub products: Vec<ProductEntry>,
}

async fn health(State(s): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ready".into(),
        model: s.model_id.clone(),
    })
}

async fn schema(State(s): State<Arc<AppState>>) -> Json<SchemaResponse> {
    let bundle = s.model.bundle();
    let columns = bundle
        .schema()
        .columns
        .iter()
        .zip(bundle.transforms())
        .map(|(c, t)| {
            let (vocabulary, range) = match t {
                ColumnTransform::Discrete(d) => (Some(d.vocabulary().to_vec()), None),
                ColumnTransform::Continuous(ct) => (None, Some(ct.range)),
            };
            ColumnInfo {
                name: c.name.clone(),
                role: c.role,
                kind: c.kind,
                vocabulary,
                min: range.map(|r| r.0),
                max: range.map(|r| r.1),
            }
        })
        .collect();
    Json(SchemaResponse {
        model: s.model_id.clone(),
        group_key: bundle.schema().group_key.clone(),
        columns,
        max_n: s.max_n,
    })
}

async fn products(State(s): State<Arc<AppState>>) -> Json<ProductsResponse> {
    let products = s
        .catalog
        .iter()
        .flat_map(|c| c.products())
        .map(|(id, attributes)| ProductEntry {
            id: id.clone(),
            attributes: attributes.clone(),
        })
        .collect();
    Json(ProductsResponse { products })
}

// ---------------------------------------------------------------------------
// Generation requests

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    /// Catalog id of the base product.
    #[serde(default)]
    pub base_product: Option<String>,
    /// Explicit base attributes; used when `base_product` is absent.
    #[serde(default)]
    pub base: Option<BTreeMap<String, Value>>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Target columns to summarize; all targets when empty.
    #[serde(default)]
    pub summary_columns: Vec<String>,
    #[serde(default)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WhatIfProvenance {
    pub model: String,
    pub seed: u64,
    pub n: usize,
    pub base_product: Option<String>,
    pub base: BTreeMap<String, Value>,
    pub overrides: BTreeMap<String, Value>,
    pub bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WhatIfResponse {
    pub baseline: Vec<DistributionSummary>,
    pub variant: Vec<DistributionSummary>,
    pub deltas: Vec<DistributionDelta>,
    pub provenance: WhatIfProvenance,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid("body", e.to_string()))
}

/// Checks one condition entry, reporting problems against `field`.
fn check_condition_value(state: &AppState, field: &str, name: &str, value: &Value) -> Result<Value, ApiError> {
    let bundle = state.model.bundle();
    let schema = bundle.schema();
    let j = schema
        .index_of(name)
        .ok_or_else(|| ApiError::invalid(field, format!("unknown column `{name}`")))?;
    let spec = &schema.columns[j];
    if spec.role != ColumnRole::Condition {
        return Err(ApiError::invalid(field, format!("`{name}` is not a condition column")));
    }
    let v = coerce_value(spec, value).map_err(|e| ApiError::invalid(field, e.to_string()))?;
    if let (ColumnTransform::Discrete(d), Some(c)) = (bundle.transform(j), v.as_cat()) {
        if d.index_of(c).is_none() {
            return Err(ApiError::invalid(field, format!("`{c}` is not a known value of `{name}`")));
        }
    }
    Ok(v)
}

fn resolve_condition(
    state: &AppState,
    base_product: &Option<String>,
    base: &Option<BTreeMap<String, Value>>,
    overrides: &BTreeMap<String, Value>,
) -> Result<ConditionSpec, ApiError> {
    let raw_base = match (base_product, base) {
        (Some(id), _) => state
            .catalog
            .as_ref()
            .and_then(|c| c.get(id))
            .cloned()
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    "not_found",
                    Some("base_product".into()),
                    format!("unknown product `{id}`"),
                )
            })?,
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(ApiError::invalid("base_product", "either base_product or base is required")),
    };
    let mut spec = ConditionSpec::default();
    for (k, v) in &raw_base {
        spec.base.insert(k.clone(), check_condition_value(state, &format!("base.{k}"), k, v)?);
    }
    for (_, c) in state.model.bundle().schema().conditions() {
        if !spec.base.contains_key(&c.name) {
            return Err(ApiError::invalid(format!("base.{}", c.name), "missing condition value"));
        }
    }
    for (k, v) in overrides {
        spec.overrides
            .insert(k.clone(), check_condition_value(state, &format!("overrides.{k}"), k, v)?);
    }
    Ok(spec)
}

fn check_n(state: &AppState, n: usize) -> Result<(), ApiError> {
    if n == 0 || n > state.max_n {
        return Err(ApiError::invalid("n", format!("n must be in 1..={}", state.max_n)));
    }
    Ok(())
}

/// Seeds stay below 2^53 so JSON clients can echo them back exactly.
fn draw_seed() -> u64 {
    rand::random::<u64>() >> 11
}

async fn run_blocking<T: Send + 'static>(
    f: impl FnOnce() -> ctvae_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)
}

/// Runs a what-if comparison; exposed for in-process callers.
pub async fn run_whatif(state: Arc<AppState>, req: WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
    check_n(&state, req.n)?;
    let variant_cond = resolve_condition(&state, &req.base_product, &req.base, &req.overrides)?;
    let baseline_cond = ConditionSpec {
        base: variant_cond.base.clone(),
        overrides: BTreeMap::new(),
    };
    let bins = req.bins.unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(ApiError::invalid("bins", "bins must be at least 1"));
    }
    let schema = state.model.bundle().schema();
    let columns: Vec<String> = if req.summary_columns.is_empty() {
        schema.targets().map(|(_, c)| c.name.clone()).collect()
    } else {
        req.summary_columns.clone()
    };
    let mut specs = Vec::with_capacity(columns.len());
    for (i, c) in columns.iter().enumerate() {
        match schema.column(c) {
            Some(col) if col.role == ColumnRole::Target => {}
            _ => return Err(ApiError::invalid(format!("summary_columns[{i}]"), format!("`{c}` is not a target column"))),
        }
        specs.push(SummarySpec::for_column(state.model.bundle(), c, bins).map_err(ApiError::internal)?);
    }
    let seed = req.seed.unwrap_or_else(draw_seed);
    let n = req.n;
    let st = state.clone();
    let (b_cond, v_cond) = (baseline_cond.clone(), variant_cond.clone());
    let (baseline, variant) = run_blocking(move || {
        let b = generate(&st.model, &b_cond, n, seed, Execution::default())?;
        let v = generate(&st.model, &v_cond, n, seed, Execution::default())?;
        Ok((b, v))
    })
    .await?;
    let summarize_all = |batch: &SyntheticBatch| -> Result<Vec<DistributionSummary>, ApiError> {
        columns
            .iter()
            .zip(&specs)
            .map(|(c, s)| {
                let mut d = summarize(batch, c, s).map_err(ApiError::internal)?;
                d.values = None;
                Ok(d)
            })
            .collect()
    };
    let baseline = summarize_all(&baseline)?;
    let variant = summarize_all(&variant)?;
    let deltas = baseline
        .iter()
        .zip(&variant)
        .map(|(a, b)| compare(a, b).map_err(ApiError::internal))
        .collect::<Result<_, _>>()?;
    Ok(WhatIfResponse {
        baseline,
        variant,
        deltas,
        provenance: WhatIfProvenance {
            model: state.model_id.clone(),
            seed,
            n,
            base_product: req.base_product,
            base: variant_cond.base,
            overrides: variant_cond.overrides,
            bins,
        },
    })
}

async fn whatif(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Json<WhatIfResponse>, ApiError> {
    let req: WhatIfRequest = parse_body(&body)?;
    run_whatif(s, req).await.map(Json)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub base_product: Option<String>,
    #[serde(default)]
    pub base: Option<BTreeMap<String, Value>>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub const SEED_HEADER: &str = "x-ctvae-seed";
pub const MODEL_HEADER: &str = "x-ctvae-model";

async fn generate_csv(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: GenerateRequest = parse_body(&body)?;
    check_n(&s, req.n)?;
    let cond = resolve_condition(&s, &req.base_product, &req.base, &req.overrides)?;
    let seed = req.seed.unwrap_or_else(draw_seed);
    let n = req.n;
    let st = s.clone();
    let csv = run_blocking(move || generate(&st.model, &cond, n, seed, Execution::default())?.to_csv_string()).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv".to_string()),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"synthetic.csv\"".to_string()),
            (header::HeaderName::from_static(SEED_HEADER), seed.to_string()),
            (header::HeaderName::from_static(MODEL_HEADER), s.model_id.clone()),
        ],
        csv,
    )
        .into_response())
}
