//! Local HTTP interface: config validation, table upload and background
//! analyses polled by id.

pub mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use fragility::config::BiasConfig;
use fragility::io::{canonical_json, table_hash};
use fragility::metrics::{catalog, MetricSpec};
use fragility::program::{build_program, build_two_bias_program, summarize, Sense};
use fragility::solver::SolverOptions;
use fragility::table::{read_table, ObservedTable};
use fragility::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use jobs::{AnalysisSpec, JobStatus, JobStore, JobView};

/// Header carrying the client's idempotency key on `POST /analyses`.
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Analyses running at once.
    pub workers: usize,
    /// Directory receiving finished result documents.
    pub persist_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { workers: 2, persist_dir: None }
    }
}

pub struct AppState {
    tables: RwLock<HashMap<String, ObservedTable>>,
    jobs: Arc<JobStore>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub kind: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, kind: &str, message: impl Into<String>) -> Self {
        FieldError { field: field.into(), kind: kind.into(), message: message.into() }
    }

    /// Attribute an engine error to the request field that caused it.
    fn from_engine(prefix: &str, e: &Error) -> Self {
        let field = match e {
            Error::DeltaRange(_) => "deltas".to_string(),
            Error::Options(_) => "options".to_string(),
            Error::Table(_) => "csv".to_string(),
            Error::InConstraint { index, .. } => format!("{prefix}.constraints[{index}]"),
            _ => match e.kind() {
                "graph" => format!("{prefix}.dag_str"),
                "event" | "evaluation" => format!("{prefix}.constraints"),
                "metric" => "metric".to_string(),
                _ => prefix.to_string(),
            },
        };
        FieldError::new(&field, e.kind(), e.to_string())
    }
}

fn canonical<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match canonical_json(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn bad_request(errors: Vec<FieldError>) -> Response {
    canonical(StatusCode::BAD_REQUEST, &json!({ "errors": errors }))
}

fn not_found(what: &str, id: &str) -> Response {
    canonical(
        StatusCode::NOT_FOUND,
        &json!({ "errors": [FieldError::new("id", "not_found", format!("unknown {what} {id:?}"))] }),
    )
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| bad_request(vec![FieldError::new("body", "json", e.to_string())]))
}

fn parse_field<T: DeserializeOwned>(field: &str, v: Value) -> Result<T, FieldError> {
    serde_json::from_value(v).map_err(|e| FieldError::new(field, "json", e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateRequest {
    config: Value,
}

async fn validate_config(body: Bytes) -> Response {
    let req: ValidateRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let outcome = parse_field::<BiasConfig>("config", req.config)
        .and_then(|c| summarize(&c).map_err(|e| FieldError::from_engine("config", &e)));
    match outcome {
        Ok(summary) => canonical(StatusCode::OK, &json!({ "valid": true, "scheme_dims": summary })),
        Err(e) => canonical(StatusCode::OK, &json!({ "valid": false, "errors": [e] })),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRequest {
    csv: String,
}

#[derive(Serialize)]
struct CellFrequency {
    a: u8,
    y: u8,
    yhat: u8,
    count: u64,
    frequency: f64,
}

fn table_body(id: &str, table: &ObservedTable) -> Value {
    let cells: Vec<CellFrequency> = table
        .cells()
        .into_iter()
        .map(|((a, y, yhat), frequency)| CellFrequency { a, y, yhat, count: table.count(a, y, yhat), frequency })
        .collect();
    json!({ "table_id": id, "total": table.total(), "cells": cells })
}

async fn upload_table(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: TableRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let table = match read_table(&req.csv) {
        Ok(t) => t,
        Err(e) => return bad_request(vec![FieldError::new("csv", e.kind(), e.to_string())]),
    };
    // content-addressed, so re-uploading the same table is harmless
    let id = table_hash(&table);
    let body = table_body(&id, &table);
    state.tables.write().expect("table lock").insert(id, table);
    canonical(StatusCode::CREATED, &body)
}

async fn get_table(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.tables.read().expect("table lock").get(&id) {
        Some(t) => canonical(StatusCode::OK, &table_body(&id, t)),
        None => not_found("table", &id),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisRequest {
    config: Value,
    table_id: String,
    /// Metric name or full metric spec object.
    metric: Value,
    deltas: Vec<f64>,
    #[serde(default)]
    options: Option<Value>,
    #[serde(default)]
    sense: Option<Sense>,
    #[serde(default)]
    second_config: Option<Value>,
    #[serde(default)]
    second_deltas: Option<Vec<f64>>,
}

fn check_deltas(field: &str, deltas: &[f64], errors: &mut Vec<FieldError>) {
    if deltas.is_empty() {
        errors.push(FieldError::new(field, "solver", "at least one budget is required"));
    } else if let Some(d) = deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        errors.push(FieldError::new(field, "solver", format!("delta {d} outside [0, 1]")));
    } else if deltas.windows(2).any(|w| w[1] < w[0]) {
        errors.push(FieldError::new(field, "solver", "budgets must be sorted ascending"));
    }
}

fn analysis_spec(state: &AppState, req: AnalysisRequest) -> Result<AnalysisSpec, Vec<FieldError>> {
    let mut errors = Vec::new();
    let config = parse_field::<BiasConfig>("config", req.config).map_err(|e| errors.push(e)).ok();
    let second = match req.second_config {
        Some(v) => parse_field::<BiasConfig>("second_config", v).map_err(|e| errors.push(e)).ok(),
        None => None,
    };
    let metric = match req.metric {
        Value::String(s) => MetricSpec::parse(&s).map_err(|e| FieldError::from_engine("metric", &e)),
        v => parse_field::<MetricSpec>("metric", v),
    }
    .map_err(|e| errors.push(e))
    .ok();
    let options = match req.options {
        Some(v) => parse_field::<SolverOptions>("options", v),
        None => Ok(SolverOptions::default()),
    }
    .and_then(|o| o.validate().map(|_| o).map_err(|e| FieldError::from_engine("options", &e)))
    .map_err(|e| errors.push(e))
    .ok();
    let table = state.tables.read().expect("table lock").get(&req.table_id).cloned();
    if table.is_none() {
        errors.push(FieldError::new("table_id", "not_found", format!("unknown table {:?}", req.table_id)));
    }
    check_deltas("deltas", &req.deltas, &mut errors);
    match (&second, &req.second_deltas) {
        (Some(_), Some(d)) => check_deltas("second_deltas", d, &mut errors),
        (Some(_), None) => errors.push(FieldError::new("second_deltas", "config", "required with second_config")),
        (None, Some(_)) => errors.push(FieldError::new("second_config", "config", "required with second_deltas")),
        (None, None) => {}
    }
    let (Some(config), Some(metric), Some(options), Some(table), true) =
        (config, metric, options, table, errors.is_empty())
    else {
        return Err(errors);
    };
    // compile once at the first budget so role and event errors surface here
    let d = req.deltas[0];
    let built = match (&second, &req.second_deltas) {
        (Some(s), Some(d2)) => build_two_bias_program(&config, s, &table, &metric, d, d2[0]),
        _ => build_program(&config, &table, &metric, d),
    };
    if let Err(e) = built {
        return Err(vec![FieldError::from_engine("config", &e)]);
    }
    Ok(AnalysisSpec {
        config,
        table,
        metric,
        deltas: req.deltas,
        sense: req.sense.unwrap_or(Sense::Both),
        options,
        second: second.zip(req.second_deltas),
    })
}

async fn submit_analysis(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let req: AnalysisRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let spec = match analysis_spec(&state, req) {
        Ok(s) => s,
        Err(errors) => return bad_request(errors),
    };
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    match state.jobs.submit(spec, key) {
        Ok(id) => canonical(StatusCode::ACCEPTED, &json!({ "analysis_id": id })),
        Err(existing) => canonical(
            StatusCode::CONFLICT,
            &json!({
                "analysis_id": existing,
                "errors": [FieldError::new(IDEMPOTENCY_HEADER, "conflict", "duplicate submission")],
            }),
        ),
    }
}

async fn get_analysis(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.jobs.get(&id) {
        Some(job) => canonical(StatusCode::OK, &job.view()),
        None => not_found("analysis", &id),
    }
}

async fn cancel_analysis(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.jobs.get(&id) {
        Some(job) => {
            job.cancel();
            canonical(StatusCode::ACCEPTED, &job.view())
        }
        None => not_found("analysis", &id),
    }
}

async fn metrics() -> Response {
    canonical(StatusCode::OK, &catalog())
}

/// Router with fresh state. Must be served from within a Tokio runtime.
pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        tables: RwLock::new(HashMap::new()),
        jobs: Arc::new(JobStore::new(config.workers, config.persist_dir)),
    });
    Router::new()
        .route("/configs/validate", post(validate_config))
        .route("/tables", post(upload_table))
        .route("/tables/{id}", get(get_table))
        .route("/analyses", post(submit_analysis))
        .route("/analyses/{id}", get(get_analysis).delete(cancel_analysis))
        .route("/metrics", get(metrics))
        .with_state(state)
}

/// Bind and serve until the process exits.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    if let Some(dir) = &config.persist_dir {
        std::fs::create_dir_all(dir)?;
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(config)).await
}
