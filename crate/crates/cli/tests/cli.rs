use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use fragility::io::{read_result, ResultDocument};
use fragility_service::{router, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fragility")).args(args).current_dir(root()).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn validate_prints_scheme_summary() {
    let v = stdout_json(&run(&["validate", "configs/selection.json"]));
    assert_eq!(v["total_dim"], 258);
    let out = run(&["project", "configs/ecp.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("T->Y"));
}

#[test]
fn errors_are_json_with_exit_codes() {
    let missing = run(&["validate", "configs/nope.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(stderr_json(&missing)["kind"], "io");

    let usage = run(&["bound", "configs/proxy.json"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(stderr_json(&usage)["kind"], "usage");

    let metric = run(&["bound", "configs/proxy.json", "data/synthetic.csv", "--metric", "XYZ", "--delta", "0"]);
    assert_eq!(metric.status.code(), Some(1));
    assert_eq!(stderr_json(&metric)["kind"], "metric");

    let delta = run(&["bound", "configs/proxy.json", "data/synthetic.csv", "--metric", "PPP", "--delta", "1.5"]);
    assert_eq!(delta.status.code(), Some(1));

    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_budget_bound_collapses() {
    let v = stdout_json(&run(&["bound", "configs/proxy.json", "data/synthetic.csv", "--metric", "DP", "--delta", "0"]));
    let (lo, hi) = (v["lower"].as_f64().unwrap(), v["upper"].as_f64().unwrap());
    // synthetic.csv has identical groups
    assert!(lo <= 1e-9 && hi >= -1e-9 && hi - lo <= 2e-3, "[{lo}, {hi}]");
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = std::env::temp_dir().join(format!("fragility-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut texts = Vec::new();
    for (i, threads) in ["1", "1", "3"].into_iter().enumerate() {
        let path = dir.join(format!("run{i}.json"));
        let out = run(&[
            "sweep",
            "configs/selection.json",
            "data/skewed.csv",
            "--metric",
            "PPP",
            "--deltas",
            "0,0.02",
            "--seed",
            "5",
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push(std::fs::read_to_string(&path).unwrap());
    }
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(texts[0], texts[1]);
    let doc = read_result(&texts[0]).unwrap();
    assert_eq!(doc.points.len(), 2);
    // the thread count is recorded in the options but does not move any bound
    assert_eq!(read_result(&texts[2]).unwrap().points, doc.points);
}

#[test]
fn oracle_checks_run() {
    let flip = stdout_json(&run(&[
        "oracle",
        "data/skewed.csv",
        "--check",
        "flip-budget",
        "--criterion",
        "dp",
        "--divergence",
        "tv",
        "--threshold",
        "0.2",
    ]));
    assert!(flip["budget"].as_f64().unwrap() > 0.0);
    let proj = stdout_json(&run(&["oracle", "data/skewed.csv", "--check", "fair-projection"]));
    assert_eq!(proj["criteria"].as_array().unwrap().len(), 3);
    let sample = stdout_json(&run(&[
        "sample",
        "configs/proxy.json",
        "data/synthetic.csv",
        "--metric",
        "PPP",
        "--delta",
        "0.02",
        "--samples",
        "200",
    ]));
    assert!(sample["kept"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn cli_and_service_write_the_same_document() {
    let cli = run(&["sweep", "configs/proxy.json", "data/synthetic.csv", "--metric", "FNRP", "--deltas", "0,0.01"]);
    let cli_doc = ResultDocument::from_json(std::str::from_utf8(&stdout_json_bytes(&cli)).unwrap()).unwrap();

    let app = router(ServiceConfig::default());
    let csv = std::fs::read_to_string(root().join("data/synthetic.csv")).unwrap();
    let config: Value = serde_json::from_str(&std::fs::read_to_string(root().join("configs/proxy.json")).unwrap()).unwrap();
    let (status, v) = call(&app, Method::POST, "/tables", Some(json!({ "csv": csv }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let body = json!({ "config": config, "table_id": v["table_id"], "metric": "FNRP", "deltas": [0.0, 0.01] });
    let (status, v) = call(&app, Method::POST, "/analyses", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let uri = format!("/analyses/{}", v["analysis_id"].as_str().unwrap());
    let served = loop {
        let (_, v) = call(&app, Method::GET, &uri, None).await;
        match v["status"].as_str().unwrap() {
            "done" => break v["document"].clone(),
            "failed" | "cancelled" => panic!("{v}"),
            _ => tokio::time::sleep(Duration::from_millis(20)).await,
        }
    };
    let served = ResultDocument::from_json(&served.to_string()).unwrap();
    assert_eq!(served.to_json(), cli_doc.to_json());
}

fn stdout_json_bytes(out: &Output) -> Vec<u8> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout.clone()
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let body = body.map(|v| Body::from(v.to_string())).unwrap_or_else(Body::empty);
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}
