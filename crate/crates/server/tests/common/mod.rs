#![allow(dead_code)]

use std::path::{Path, PathBuf};

use aquabot_server::config::ServiceConfig;
use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Fixture config with model and conversation stores under `tmp`.
pub fn fixture_config(tmp: &Path) -> ServiceConfig {
    let text = std::fs::read_to_string(data_dir().join("aquabot.toml")).unwrap();
    let mut cfg = ServiceConfig::from_toml(&text, &data_dir(), "aquabot.toml").unwrap();
    cfg.store.models = tmp.join("models");
    cfg.store.conversations = tmp.join("conversations");
    cfg.fixed_time = Some("2019-03-01T12:00:00Z".parse().unwrap());
    cfg.check_paths().unwrap();
    cfg
}

/// Copy the fixture data into `dir` so a test can edit it.
pub fn copy_fixture(dir: &Path) -> ServiceConfig {
    std::fs::create_dir_all(dir).unwrap();
    for e in std::fs::read_dir(data_dir()).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), dir.join(e.file_name())).unwrap();
    }
    let text = std::fs::read_to_string(dir.join("aquabot.toml")).unwrap();
    let mut cfg = ServiceConfig::from_toml(&text, dir, "aquabot.toml").unwrap();
    cfg.store.models = dir.join("models");
    cfg.store.conversations = dir.join("conversations");
    cfg.fixed_time = Some("2019-03-01T12:00:00Z".parse().unwrap());
    cfg
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
}

impl Reply {
    pub fn version(&self) -> Option<&str> {
        self.headers.get("x-model-version").and_then(|v| v.to_str().ok())
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply { status, headers, body }
}

pub async fn say(app: &Router, conversation: &str, text: &str) -> Reply {
    call(
        app,
        Method::POST,
        &format!("/webhooks/rest/{conversation}/messages"),
        Some(serde_json::json!({ "sender": conversation, "message": text })),
    )
    .await
}

pub fn texts(reply: &Reply) -> Vec<String> {
    reply
        .body
        .as_array()
        .map(|a| a.iter().map(|m| m["text"].as_str().unwrap().to_string()).collect())
        .unwrap_or_default()
}
