use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use ctvae_core::experiment::{make_synthetic_corpus, Catalog, CorpusSpec};
use ctvae_core::model::{save_model, train, ModelParams, TrainConfig};
use ctvae_service::{router, AppState, SchemaResponse, WhatIfResponse, DEFAULT_MAX_N, SEED_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value as Json};
use tower::ServiceExt;

fn fixture() -> &'static (ModelParams, Catalog) {
    static FIXTURE: OnceLock<(ModelParams, Catalog)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = make_synthetic_corpus(&CorpusSpec::flip_oracle(10, (60, 60)), 4).unwrap();
        let cfg = TrainConfig {
            preset: 64,
            max_epochs: 40,
            batch_size: 100,
            learning_rate: 3e-3,
            seed: 1,
            ..Default::default()
        };
        let (model, _) = train(&corpus.data, &cfg).unwrap();
        (model, corpus.catalog)
    })
}

fn state(max_n: usize) -> Arc<AppState> {
    let (m, c) = fixture();
    Arc::new(AppState::new(m.clone(), Some(c.clone()), max_n))
}

async fn call(state: Arc<AppState>, method: &str, uri: &str, body: Option<Json>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, headers)
}

async fn call_json(state: Arc<AppState>, method: &str, uri: &str, body: Option<Json>) -> (StatusCode, Json) {
    let (s, b, _) = call(state, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn product_with_g(g: &str) -> String {
    let (_, c) = fixture();
    c.products()
        .iter()
        .find(|(_, v)| v["g"].to_string() == g)
        .map(|(k, _)| k.clone())
        .expect("catalog has both conditions")
}

#[tokio::test]
async fn health_and_schema() {
    let (s, body) = call_json(state(DEFAULT_MAX_N), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ready");

    let (s, body) = call_json(state(DEFAULT_MAX_N), "GET", "/schema", None).await;
    assert_eq!(s, StatusCode::OK);
    let schema: SchemaResponse = serde_json::from_value(body).unwrap();
    let names: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["b", "x", "g", "size"]);
    let g = schema.columns.iter().find(|c| c.name == "g").unwrap();
    assert_eq!(g.vocabulary.as_deref(), Some(&["0".to_string(), "1".to_string()][..]));
    let x = schema.columns.iter().find(|c| c.name == "x").unwrap();
    let (lo, hi) = (x.min.unwrap(), x.max.unwrap());
    // The recorded range is the training range of the column.
    let (m, _) = fixture();
    let j = m.bundle().schema().index_of("x").unwrap();
    match m.bundle().transform(j) {
        ctvae_core::transform::ColumnTransform::Continuous(t) => assert_eq!(t.range, (lo, hi)),
        _ => unreachable!(),
    }
    assert!(lo < hi);
}

#[tokio::test]
async fn products_lists_catalog() {
    let (s, body) = call_json(state(DEFAULT_MAX_N), "GET", "/products", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["products"].as_array().unwrap().len(), 10);
    assert!(body["products"][0]["attributes"]["g"].is_string());
}

#[tokio::test]
async fn empty_overrides_give_identical_panels() {
    let req = json!({"base_product": product_with_g("0"), "n": 2000, "seed": 7});
    let (s, body) = call_json(state(DEFAULT_MAX_N), "POST", "/whatif", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let r: WhatIfResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.baseline, r.variant);
    assert!(r.deltas.iter().all(|d| d.deltas.iter().all(|&x| x == 0.0)));
    assert_eq!(r.provenance.seed, 7);
}

#[tokio::test]
async fn override_shifts_the_flipped_target() {
    let req = json!({"base_product": product_with_g("0"), "overrides": {"g": "1"}, "n": 4000, "seed": 3,
                     "summary_columns": ["b"]});
    let (s, body) = call_json(state(DEFAULT_MAX_N), "POST", "/whatif", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let r: WhatIfResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.baseline.len(), 1);
    let labels = &r.baseline[0].labels;
    let one = labels.iter().position(|l| l == "1").unwrap();
    assert!(r.variant[0].frequencies[one] > r.baseline[0].frequencies[one] + 0.2, "{r:?}");
    assert!(r.deltas[0].deltas.iter().sum::<f64>().abs() < 1e-9);
}

#[tokio::test]
async fn explicit_base_and_numeric_values_are_accepted() {
    let req = json!({"base": {"g": 1, "size": "small"}, "n": 10, "seed": 1});
    let (s, body) = call_json(state(DEFAULT_MAX_N), "POST", "/whatif", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
}

async fn expect_error(req: Json, status: StatusCode, field: &str) {
    let (s, body) = call_json(state(100), "POST", "/whatif", Some(req)).await;
    assert_eq!(s, status, "{body}");
    assert_eq!(body["error"]["field"], field, "{body}");
}

#[tokio::test]
async fn invalid_requests_name_the_field() {
    let p = product_with_g("0");
    expect_error(json!({"base_product": p, "n": 0}), StatusCode::BAD_REQUEST, "n").await;
    expect_error(json!({"base_product": p, "n": 101}), StatusCode::BAD_REQUEST, "n").await;
    expect_error(json!({"base_product": "nope", "n": 5}), StatusCode::NOT_FOUND, "base_product").await;
    expect_error(json!({"base_product": p, "n": 5, "overrides": {"flavor": "x"}}), StatusCode::BAD_REQUEST, "overrides.flavor").await;
    expect_error(json!({"base_product": p, "n": 5, "overrides": {"b": "1"}}), StatusCode::BAD_REQUEST, "overrides.b").await;
    expect_error(json!({"base_product": p, "n": 5, "overrides": {"size": "huge"}}), StatusCode::BAD_REQUEST, "overrides.size").await;
    expect_error(json!({"base": {"g": "0"}, "n": 5}), StatusCode::BAD_REQUEST, "base.size").await;
    expect_error(json!({"base_product": p, "n": 5, "summary_columns": ["g"]}), StatusCode::BAD_REQUEST, "summary_columns[0]").await;
    expect_error(json!({"n": 5}), StatusCode::BAD_REQUEST, "base_product").await;
    expect_error(json!({"base_product": p}), StatusCode::BAD_REQUEST, "body").await;
}

#[tokio::test]
async fn omitted_seed_is_returned_and_replays() {
    let p = product_with_g("1");
    let (_, body) = call_json(state(DEFAULT_MAX_N), "POST", "/whatif", Some(json!({"base_product": p, "n": 500, "overrides": {"g": "0"}}))).await;
    let first: WhatIfResponse = serde_json::from_value(body).unwrap();
    assert!(first.provenance.seed < (1u64 << 53));
    let replay = json!({"base_product": p, "n": 500, "overrides": {"g": "0"}, "seed": first.provenance.seed});
    let (_, body) = call_json(state(DEFAULT_MAX_N), "POST", "/whatif", Some(replay)).await;
    let second: WhatIfResponse = serde_json::from_value(body).unwrap();
    assert_eq!(first, second);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let st = state(DEFAULT_MAX_N);
    let req = json!({"base_product": product_with_g("0"), "overrides": {"size": "large"}, "n": 3000, "seed": 99});
    let a = tokio::spawn(call(st.clone(), "POST", "/whatif", Some(req.clone())));
    let b = tokio::spawn(call(st.clone(), "POST", "/whatif", Some(req)));
    let (a, b) = (a.await.unwrap(), b.await.unwrap());
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a.1, b.1);
}

#[tokio::test]
async fn generate_returns_csv_attachment() {
    let req = json!({"base_product": product_with_g("1"), "n": 25, "seed": 5});
    let (s, body, headers) = call(state(DEFAULT_MAX_N), "POST", "/generate", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(headers["content-type"], "text/csv");
    assert!(headers["content-disposition"].to_str().unwrap().starts_with("attachment"));
    assert_eq!(headers[SEED_HEADER], "5");
    let text = String::from_utf8(body).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b,x"));
    assert_eq!(lines.count(), 25);
}

#[test]
fn corrupt_model_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ctvm");
    std::fs::write(&path, b"not a model").unwrap();
    assert!(matches!(AppState::load(&path, None, 10), Err(ctvae_service::ServiceError::Model(_))));
}

#[tokio::test]
async fn serves_over_a_real_socket() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let (m, _) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ctvm");
    save_model(m, &path).unwrap();
    let st = Arc::new(AppState::load(&path, None, DEFAULT_MAX_N).unwrap());
    let listener = ctvae_service::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(ctvae_service::serve(listener, st));
    let mut sock = tokio::net::TcpStream::connect(addr).await.unwrap();
    sock.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut resp = String::new();
    sock.read_to_string(&mut resp).await.unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"ready\""));
    // A second bind on the same address fails.
    assert!(ctvae_service::bind(&addr.to_string()).await.is_err());
    server.abort();
}
