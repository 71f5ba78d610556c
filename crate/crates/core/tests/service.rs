use std::path::Path;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hirecall::eval::MetricsReport;
use hirecall::manifest::RunManifest;
use hirecall::runlog::RunLog;
use hirecall::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn manifest() -> RunManifest {
    let text = "[synthetic]\nseed = 4\ndocs = 400\ntopics = 2\nrelevant_per_topic = 10\n";
    let m = RunManifest::parse(text, Path::new("."), Path::new("m.toml")).unwrap();
    m.validate().unwrap();
    m
}

fn loaded(data_dir: &Path, token: Option<&str>) -> (AppState, Router) {
    let mut config = ServiceConfig::new(data_dir);
    config.auth_token = token.map(str::to_string);
    let m = manifest();
    let data = m.load_data().unwrap();
    let state = AppState::new(m, config);
    state.install(data).unwrap();
    (state.clone(), router(state))
}

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    text: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or(Value::Null)
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        headers,
        text: String::from_utf8_lossy(&bytes).into_owned(),
    }
}

async fn create(app: &Router, body: Value) -> Reply {
    send(app, "POST", "/sessions", Some(body), None).await
}

async fn judge_next(app: &Router, id: &str, relevant: bool) -> String {
    let next = send(app, "GET", &format!("/sessions/{id}/next"), None, None).await.json();
    let doc = next["doc_id"].as_str().unwrap().to_string();
    let ack = send(app, "POST", &format!("/sessions/{id}/judgments"), Some(json!({"doc_id": doc, "judgment": relevant})), None).await;
    assert_eq!(ack.status, StatusCode::OK, "{}", ack.text);
    doc
}

#[tokio::test]
async fn health_is_503_until_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(manifest(), ServiceConfig::new(dir.path()));
    let app = router(state.clone());
    assert_eq!(send(&app, "GET", "/healthz", None, None).await.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(create(&app, json!({"topic_id": "101"})).await.status, StatusCode::SERVICE_UNAVAILABLE);
    tokio::task::spawn_blocking(move || state.load()).await.unwrap().unwrap();
    let health = send(&app, "GET", "/healthz", None, None).await;
    assert_eq!(health.status, StatusCode::OK);
    assert_eq!(health.json()["status"], "ok");
}

#[tokio::test]
async fn create_validates_topic_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), None);
    let a = create(&app, json!({"topic_id": "101"})).await;
    let b = create(&app, json!({"topic_id": "101", "overrides": {"seed": 9, "negatives": "balanced"}})).await;
    assert_eq!(a.status, StatusCode::CREATED);
    assert_eq!(b.status, StatusCode::CREATED);
    assert_ne!(a.json()["session_id"], b.json()["session_id"]);
    assert_eq!(a.json()["state"], "active");
    assert_eq!(a.json()["topic_id"], "101");

    assert_eq!(create(&app, json!({"topic_id": "999"})).await.status, StatusCode::NOT_FOUND);
    for (body, field) in [
        (json!({"topic_id": "101", "overrides": {"retrain_every": 0}}), "retrain_every"),
        (json!({"topic_id": "101", "overrides": {"fusion": "e5"}}), "fusion"),
        (json!({"topic_id": "101", "overrides": {"fusion": "e3"}}), "fusion"),
        (json!({"topic_id": "101", "overrides": {"speed": 1}}), "speed"),
        (json!({"topic": "101"}), "topic"),
    ] {
        let r = create(&app, body).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.text);
        assert_eq!(r.json()["field"], field);
    }
    let listed = send(&app, "GET", "/sessions", None, None).await.json();
    assert_eq!(listed.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn next_is_idempotent_and_judgments_advance() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), None);
    let id = create(&app, json!({"topic_id": "102"})).await.json()["session_id"].as_str().unwrap().to_string();
    let next = format!("/sessions/{id}/next");
    let first = send(&app, "GET", &next, None, None).await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.json()["iteration"], 1);
    assert!(!first.json()["text"].as_str().unwrap().is_empty());
    assert_eq!(send(&app, "GET", &next, None, None).await.text, first.text);

    let doc = first.json()["doc_id"].as_str().unwrap().to_string();
    let judge = format!("/sessions/{id}/judgments");
    let ack = send(&app, "POST", &judge, Some(json!({"doc_id": doc, "judgment": "relevant"})), None).await;
    assert_eq!(ack.json(), json!({"accepted": true, "next_iteration": 2}));
    let stale = send(&app, "POST", &judge, Some(json!({"doc_id": doc, "judgment": "relevant"})), None).await;
    assert_eq!(stale.status, StatusCode::CONFLICT);
    let never = send(&app, "POST", &judge, Some(json!({"doc_id": "doc0000399", "judgment": "relevant"})), None).await;
    assert_eq!(never.status, StatusCode::CONFLICT);
    let bad = send(&app, "POST", &judge, Some(json!({"doc_id": doc, "judgment": "maybe"})), None).await;
    assert_eq!(bad.json()["field"], "judgment");

    let second = send(&app, "GET", &next, None, None).await.json();
    assert_ne!(second["doc_id"], doc.as_str());
    assert_eq!(second["iteration"], 2);
    assert_eq!(send(&app, "GET", "/sessions/nope/next", None, None).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_judgments_first_wins() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), None);
    let id = create(&app, json!({"topic_id": "101"})).await.json()["session_id"].as_str().unwrap().to_string();
    let doc = send(&app, "GET", &format!("/sessions/{id}/next"), None, None).await.json()["doc_id"].clone();
    let judge = format!("/sessions/{id}/judgments");
    let body = json!({"doc_id": doc, "judgment": "nonrelevant"});
    let (a, b) = tokio::join!(
        send(&app, "POST", &judge, Some(body.clone()), None),
        send(&app, "POST", &judge, Some(body.clone()), None)
    );
    let mut codes = [a.status.as_u16(), b.status.as_u16()];
    codes.sort();
    assert_eq!(codes, [200, 409]);
}

#[tokio::test]
async fn metrics_match_eval_of_export() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), None);
    let id = create(&app, json!({"topic_id": "101"})).await.json()["session_id"].as_str().unwrap().to_string();
    let metrics = format!("/sessions/{id}/metrics");
    let fresh = send(&app, "GET", &metrics, None, None).await.json();
    assert_eq!(fresh["gain_curve"].as_array().unwrap().len(), 0);
    assert_eq!(fresh["r_t_known"], true);

    for i in 0..7 {
        judge_next(&app, &id, i % 2 == 0).await;
    }
    let m = send(&app, "GET", &metrics, None, None).await.json();
    assert_eq!(m["gain_curve"].as_array().unwrap().len(), 7);
    assert_eq!(m["relevant_found_curve"].as_array().unwrap().len(), 7);

    let export = send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await;
    assert!(export.headers["content-type"].to_str().unwrap().starts_with("text/tab-separated-values"));
    let log = RunLog::read(export.text.as_bytes(), "export").unwrap();
    assert_eq!(log.len(), 7);
    let report = MetricsReport::compute("101", &log, 10, &hirecall::eval::DEFAULT_CUTOFFS);
    let served: MetricsReport = serde_json::from_value(m.clone()).unwrap();
    assert_eq!(served, report);
}

#[tokio::test]
async fn budget_exhaustion_and_close() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), None);
    let id = create(&app, json!({"topic_id": "101", "overrides": {"stop_after": 3}})).await.json()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    for _ in 0..3 {
        judge_next(&app, &id, false).await;
    }
    let done = send(&app, "GET", &format!("/sessions/{id}/next"), None, None).await;
    assert_eq!(done.status, StatusCode::NO_CONTENT);
    assert_eq!(done.headers["x-session-state"], "exhausted");
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}"), None, None).await.json()["state"], "exhausted");

    let closed = send(&app, "DELETE", &format!("/sessions/{id}"), None, None).await;
    assert_eq!(closed.json()["state"], "closed");
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/next"), None, None).await.status, StatusCode::CONFLICT);
    let export = send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await;
    assert_eq!(export.status, StatusCode::OK);
    assert_eq!(export.text.lines().count(), 3);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = loaded(dir.path(), None);
    let id = create(&app, json!({"topic_id": "102"})).await.json()["session_id"].as_str().unwrap().to_string();
    for i in 0..4 {
        judge_next(&app, &id, i == 0).await;
    }
    let before_next = send(&app, "GET", &format!("/sessions/{id}/next"), None, None).await.text;
    let before_export = send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await.text;
    drop((state, app));

    let (_, app) = loaded(dir.path(), None);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await.text, before_export);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/next"), None, None).await.text, before_next);
}

#[tokio::test]
async fn bearer_token_guards_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = loaded(dir.path(), Some("s3cret"));
    assert_eq!(send(&app, "GET", "/healthz", None, None).await.status, StatusCode::OK);
    assert_eq!(send(&app, "GET", "/sessions", None, None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&app, "GET", "/sessions", None, Some("wrong")).await.status, StatusCode::UNAUTHORIZED);
    let ok = send(&app, "POST", "/sessions", Some(json!({"topic_id": "101"})), Some("s3cret")).await;
    assert_eq!(ok.status, StatusCode::CREATED);
}

#[tokio::test]
async fn serves_ui_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<h1>review</h1>").unwrap();
    let mut config = ServiceConfig::new(dir.path().join("data"));
    config.ui_dir = Some(ui);
    let app = router(AppState::new(manifest(), config));
    let page = send(&app, "GET", "/ui/index.html", None, None).await;
    assert_eq!(page.status, StatusCode::OK);
    assert_eq!(page.text, "<h1>review</h1>");
}
