#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

use convlens_service::{router, BackendMode, RunnerMode, ServiceConfig, Store};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn coffee_config(root: &Path) -> ServiceConfig {
    let mut config = ServiceConfig::new(root);
    config.backend = BackendMode::Replay(vec![fixture("coffee/transcript.json")]);
    config.runner = RunnerMode::Echo;
    config
}

pub fn app(config: ServiceConfig) -> (Arc<Store>, Router) {
    let store = Store::open(config).unwrap();
    (store.clone(), router(store))
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Vec<u8>>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::POST, uri, Some(body.to_string().into_bytes())).await
}

pub async fn patch(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::PATCH, uri, Some(body.to_string().into_bytes())).await
}

pub fn upload(export: &[u8], datasets: &[(&str, &[u8])]) -> Value {
    let export: Value = serde_json::from_slice(export).unwrap();
    let b64 = base64::engine::general_purpose::STANDARD;
    let datasets: serde_json::Map<String, Value> = datasets
        .iter()
        .map(|(n, b)| (n.to_string(), Value::String(b64.encode(b))))
        .collect();
    json!({"export": export, "datasets": datasets})
}

pub fn coffee_upload() -> Value {
    let export = std::fs::read(fixture("coffee/export.json")).unwrap();
    let csv = std::fs::read(fixture("coffee/coffee_survey.csv")).unwrap();
    upload(&export, &[("coffee_survey.csv", &csv)])
}

/// Polls the status route until the job leaves the running states.
pub async fn wait_done(app: &Router, id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let meta = get(app, &format!("/sessions/{id}/status")).await.json();
        let status = meta["status"].as_str().unwrap().to_string();
        if status == "ready" || status == "failed" {
            return meta;
        }
        assert!(Instant::now() < deadline, "session {id} stuck in {status}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
