mod common;

use std::collections::BTreeMap;

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};

use common::*;
use convlens_core::state::StructuredState;
use convlens_service::{BackendMode, RunnerMode, ServiceConfig};

#[tokio::test(flavor = "multi_thread")]
async fn upload_structure_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(coffee_config(dir.path()));

    let created = post(&app, "/sessions", coffee_upload()).await;
    assert_eq!(created.status, StatusCode::ACCEPTED);
    let meta = created.json();
    assert_eq!(meta["session_id"], "s1");
    let meta = wait_done(&app, "s1").await;
    assert_eq!(meta["status"], "ready", "{meta}");
    assert_eq!(meta["partial"], false, "{meta}");

    let view = get(&app, "/sessions/s1/structure").await;
    assert_eq!(view.status, StatusCode::OK);
    assert_eq!(view.content_type, "application/json");
    let view = view.json();
    assert_eq!(view["turns"].as_array().unwrap().len(), 12);
    assert_eq!(view["insights"].as_array().unwrap().len(), 3);
    let titles: Vec<&str> = view["threads"].as_array().unwrap().iter().map(|t| t["title"].as_str().unwrap()).collect();
    assert!(titles.contains(&"Coffee drinker categorization and detailed analysis"));

    let stats = get(&app, "/sessions/s1/stats").await.json();
    assert_eq!(stats["turn_count"], 12);

    let turn = get(&app, "/sessions/s1/turns/2").await;
    assert_eq!(turn.status, StatusCode::OK);
    assert_eq!(turn.json()["turn"]["turn_index"], 2);
    let missing = get(&app, "/sessions/s1/turns/99").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.json()["error"], "UnknownTurn");

    let icons = view["artifacts"].as_array().unwrap();
    assert!(!icons.is_empty());
    for icon in icons {
        let id = icon["artifact_id"].as_str().unwrap();
        let payload = get(&app, &format!("/sessions/s1/artifacts/{id}")).await;
        assert_eq!(payload.status, StatusCode::OK, "{id}");
        assert!(!payload.body.is_empty());
        let expected = match icon["kind"].as_str().unwrap() {
            "code" => "text/x-python",
            _ => "",
        };
        if !expected.is_empty() {
            assert_eq!(payload.content_type, expected);
        }
    }
    assert_eq!(get(&app, "/sessions/s1/artifacts/nope").await.status, StatusCode::NOT_FOUND);

    let filtered = get(&app, "/sessions/s1/structure?filters=artifact_kinds:code").await.json();
    assert!(filtered["artifacts"].as_array().unwrap().iter().all(|a| a["kind"] == "code"));
    assert_eq!(filtered["turns"].as_array().unwrap().len(), 12);
    let bad = get(&app, "/sessions/s1/structure?filters=colour:red").await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);

    let list = get(&app, "/sessions").await.json();
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn rejected_uploads_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(coffee_config(dir.path()));

    let bad = call(&app, Method::POST, "/sessions", Some(b"{not json".to_vec())).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.json()["error"], "MalformedExport");

    let bad = post(&app, "/sessions", json!({"export": {"mapping": 3}})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.json()["error"], "MalformedExport");

    let export = std::fs::read(fixture("coffee/export.json")).unwrap();
    let missing = post(&app, "/sessions", upload(&export, &[])).await;
    assert_eq!(missing.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(missing.json()["error"], "MissingDataset");

    let sneaky = post(&app, "/sessions", upload(&export, &[("../x.csv", b"a\n")])).await;
    assert_eq!(sneaky.status, StatusCode::BAD_REQUEST);

    let bad64 = post(&app, "/sessions", json!({"export": {}, "datasets": {"a.csv": "%%%"}})).await;
    assert_eq!(bad64.status, StatusCode::BAD_REQUEST);

    assert_eq!(get(&app, "/sessions").await.json(), json!([]));
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert!(entries.is_empty());
    assert_eq!(get(&app, "/sessions/s1/status").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn bare_export_body_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(ServiceConfig::new(dir.path()));
    let export = std::fs::read(fixture("speech_acts/export.json")).unwrap();
    let created = call(&app, Method::POST, "/sessions", Some(export)).await;
    assert_eq!(created.status, StatusCode::ACCEPTED);
    let meta = wait_done(&app, "s1").await;
    assert_eq!(meta["status"], "ready");
    assert_eq!(meta["partial"], false);
    let view = get(&app, "/sessions/s1/structure").await.json();
    assert!(view["turns"].as_array().unwrap().iter().all(|t| !t["speech_act"].is_null()));
}

#[tokio::test(flavor = "multi_thread")]
async fn queries_before_ready_are_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = coffee_config(dir.path());
    config.runner = RunnerMode::Command("sleep 1".into());
    let (_, app) = app(config);
    post(&app, "/sessions", coffee_upload()).await;
    let early = get(&app, "/sessions/s1/structure").await;
    assert_eq!(early.status, StatusCode::CONFLICT);
    assert_eq!(early.json()["error"], "NotReady");
    assert_eq!(post(&app, "/sessions/s1/compositions", json!({})).await.status, StatusCode::CONFLICT);

    let meta = wait_done(&app, "s1").await;
    assert_eq!(meta["status"], "ready");
    assert_eq!(meta["partial"], true);
    assert!(meta["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("execution stopped")), "{meta}");
}

async fn ready_coffee(root: &std::path::Path) -> axum::Router {
    let (_, app) = app(coffee_config(root));
    post(&app, "/sessions", coffee_upload()).await;
    assert_eq!(wait_done(&app, "s1").await["status"], "ready");
    app
}

fn ids(c: &Value) -> Vec<u64> {
    c["blocks"].as_array().unwrap().iter().map(|b| b["block_id"].as_u64().unwrap()).collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn composition_editing() {
    let dir = tempfile::tempdir().unwrap();
    let app = ready_coffee(dir.path()).await;

    let c = post(&app, "/sessions/s1/compositions", json!({})).await;
    assert_eq!(c.status, StatusCode::CREATED);
    assert_eq!(c.json()["composition_id"], "c1");
    let uri = "/sessions/s1/compositions/c1";

    let r = patch(
        &app,
        uri,
        json!([
            {"op": "add", "ref": {"kind": "turn", "target_id": "1"}},
            {"op": "add", "ref": {"kind": "insight", "target_id": "0"}},
            {"op": "insert", "text": "Pricing is next.", "position": [0, 0]},
        ]),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    let r = r.json();
    let block_ids: Vec<u64> = r["block_ids"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(block_ids.len(), 3);
    assert_eq!(ids(&r["composition"]), block_ids[..2]);
    assert_eq!(r["composition"]["blocks"][0]["children"][0]["block_id"], block_ids[2]);

    let one = patch(&app, uri, json!({"op": "edit", "block_id": block_ids[2], "text": "Pricing."})).await;
    assert_eq!(one.status, StatusCode::OK);

    let cycle = patch(&app, uri, json!({"op": "move", "block_id": block_ids[0], "position": [0, 0, 0]})).await;
    assert_eq!(cycle.status, StatusCode::CONFLICT);
    assert_eq!(cycle.json()["error"], "CycleMove");

    let before = get(&app, uri).await.body;
    let batch = patch(
        &app,
        uri,
        json!({"ops": [
            {"op": "remove", "block_id": block_ids[1]},
            {"op": "add", "ref": {"kind": "artifact", "target_id": "code-99"}},
        ]}),
    )
    .await;
    assert_eq!(batch.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(batch.json()["error"], "UnknownRef");
    assert_eq!(get(&app, uri).await.body, before);

    let unknown = patch(&app, uri, json!({"op": "remove", "block_id": 999})).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
    assert_eq!(unknown.json()["error"], "UnknownBlock");
    let garbage = patch(&app, uri, json!({"op": "fly"})).await;
    assert_eq!(garbage.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/sessions/s1/compositions/c9").await.status, StatusCode::NOT_FOUND);

    let md = post(&app, &format!("{uri}/serialize"), json!({})).await.json();
    let md = md["markdown"].as_str().unwrap();
    assert!(md.starts_with("* "), "{md}");
    assert!(md.contains("\n  * Pricing."), "{md}");
    let stored = get(&app, uri).await.json();
    assert_eq!(stored["serialized_markdown"], md);

    let bad = post(&app, &format!("{uri}/summary"), json!({"length": 7, "technical_detail": 1, "formality": 1})).await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(bad.json()["error"], "InvalidParams");
}

#[tokio::test(flavor = "multi_thread")]
async fn summary_needs_a_backend() {
    let dir = tempfile::tempdir().unwrap();
    let (store, app) = app(ServiceConfig::new(dir.path()));
    let state: StructuredState = serde_json::from_slice(&std::fs::read(fixture("report_example/state.json")).unwrap()).unwrap();
    store.import_state(state, &BTreeMap::new()).unwrap();
    post(&app, "/sessions/s1/compositions", json!({})).await;
    patch(&app, "/sessions/s1/compositions/c1", json!({"op": "add", "ref": {"kind": "turn", "target_id": "5"}})).await;
    let r = post(&app, "/sessions/s1/compositions/c1/summary", json!({})).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(r.json()["error"], "NoBackend");
}

pub fn report_files(state: &StructuredState) -> BTreeMap<String, Vec<u8>> {
    state
        .artifact_registry
        .iter()
        .map(|a| {
            let name = a.path.trim_start_matches('/');
            (a.path.clone(), std::fs::read(fixture(&format!("report_example/artifacts/{name}"))).unwrap())
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn recorded_summary_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(dir.path());
    config.backend = BackendMode::Replay(vec![fixture("report_example/transcript.json")]);
    let (store, app) = app(config);
    let state: StructuredState = serde_json::from_slice(&std::fs::read(fixture("report_example/state.json")).unwrap()).unwrap();
    let files = report_files(&state);
    store.import_state(state, &files).unwrap();

    let png = get(&app, "/sessions/s1/artifacts/viz-1").await;
    assert_eq!(png.status, StatusCode::OK);
    assert_eq!(png.content_type, "image/png");

    post(&app, "/sessions/s1/compositions", json!({})).await;
    let r = patch(
        &app,
        "/sessions/s1/compositions/c1",
        json!([
            {"op": "add", "ref": {"kind": "turn", "target_id": "5"}},
            {"op": "add", "ref": {"kind": "artifact", "target_id": "viz-0"}},
            {"op": "add", "ref": {"kind": "turn", "target_id": "10"}},
            {"op": "add", "ref": {"kind": "insight", "target_id": "0"}},
        ]),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let r = post(
        &app,
        "/sessions/s1/compositions/c1/summary",
        json!({"length": 1, "technical_detail": 1, "formality": 2}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    let r = r.json();
    assert_eq!(r["markdown"], std::fs::read_to_string(fixture("report_example/expected_input.md")).unwrap());
    assert_eq!(r["summary"], std::fs::read_to_string(fixture("report_example/expected_output.md")).unwrap());
    assert_eq!(r["attempts"], 1);

    let stored = get(&app, "/sessions/s1/compositions/c1").await.json();
    assert_eq!(stored["generated_summary"], r["summary"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_keeps_sessions_and_compositions() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = ready_coffee(dir.path()).await;
    post(&app1, "/sessions/s1/compositions", json!({})).await;
    patch(&app1, "/sessions/s1/compositions/c1", json!({"op": "insert", "text": "kept"})).await;
    let structure = get(&app1, "/sessions/s1/structure").await.body;
    let stats = get(&app1, "/sessions/s1/stats").await.body;
    let comp = get(&app1, "/sessions/s1/compositions/c1").await.body;
    drop(app1);

    let (_, app2) = app(coffee_config(dir.path()));
    assert_eq!(get(&app2, "/sessions/s1/structure").await.body, structure);
    assert_eq!(get(&app2, "/sessions/s1/stats").await.body, stats);
    assert_eq!(get(&app2, "/sessions/s1/compositions/c1").await.body, comp);
    let c2 = post(&app2, "/sessions/s1/compositions", json!({})).await.json();
    assert_eq!(c2["composition_id"], "c2");
    let s2 = post(&app2, "/sessions", coffee_upload()).await.json();
    assert_eq!(s2["session_id"], "s2");
}

#[tokio::test(flavor = "multi_thread")]
async fn interrupted_jobs_resume_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = ready_coffee(dir.path()).await;
    let structure = get(&app1, "/sessions/s1/structure").await.body;
    drop(app1);

    let session = dir.path().join("s1");
    std::fs::remove_file(session.join("state.json")).unwrap();
    let meta_path = session.join("session.json");
    let mut meta: Value = serde_json::from_slice(&std::fs::read(&meta_path).unwrap()).unwrap();
    meta["status"] = json!("executing");
    std::fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();

    let (_, app2) = app(coffee_config(dir.path()));
    assert_eq!(wait_done(&app2, "s1").await["status"], "ready");
    assert_eq!(get(&app2, "/sessions/s1/structure").await.body, structure);
}
