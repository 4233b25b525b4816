//! HTTP routes.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use convlens_core::composition::{Composition, CompositionOp, SummaryParams};
use convlens_core::view::{annotated_turn, structure_view, FilterSpec};

use crate::error::ApiError;
use crate::store::Store;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/structure", get(structure))
        .route("/sessions/{id}/turns/{n}", get(turn))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/artifacts/{aid}", get(artifact))
        .route("/sessions/{id}/compositions", post(create_composition))
        .route("/sessions/{id}/compositions/{cid}", get(get_composition).patch(patch_composition))
        .route("/sessions/{id}/compositions/{cid}/serialize", post(serialize))
        .route("/sessions/{id}/compositions/{cid}/summary", post(summary))
        .with_state(store)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

fn json_bytes<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("serializable");
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

type Upload = (Vec<u8>, BTreeMap<String, Vec<u8>>);

/// The body is either the export document itself, or
/// `{"export": <document or string>, "datasets": {"name": "<base64>"}}`.
fn split_upload(body: &[u8]) -> Result<Upload, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::MalformedExport(format!("malformed export: {e}")))?;
    let Some(export) = value.get("export") else {
        return Ok((body.to_vec(), BTreeMap::new()));
    };
    let export = match export {
        Value::String(s) => s.clone().into_bytes(),
        other => serde_json::to_vec(other).expect("serializable"),
    };
    let mut datasets = BTreeMap::new();
    if let Some(map) = value.get("datasets") {
        let map = map
            .as_object()
            .ok_or_else(|| ApiError::BadRequest("\"datasets\" must map file names to base64 content".into()))?;
        for (name, content) in map {
            let raw = content
                .as_str()
                .ok_or_else(|| ApiError::BadRequest(format!("dataset {name:?} is not a base64 string")))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(raw)
                .map_err(|e| ApiError::BadRequest(format!("dataset {name:?}: {e}")))?;
            datasets.insert(name.clone(), bytes);
        }
    }
    Ok((export, datasets))
}

async fn create_session(State(store): State<Arc<Store>>, body: Bytes) -> Result<Response, ApiError> {
    let meta = blocking(move || {
        let (export, datasets) = split_upload(&body)?;
        store.create_session(&export, &datasets)
    })
    .await?;
    Ok(json_bytes(StatusCode::ACCEPTED, &meta))
}

async fn list_sessions(State(store): State<Arc<Store>>) -> Response {
    json_bytes(StatusCode::OK, &store.list())
}

async fn status(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_bytes(StatusCode::OK, &store.session(&id)?.meta()))
}

#[derive(Deserialize)]
struct StructureQuery {
    #[serde(default)]
    filters: Option<String>,
}

async fn structure(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<StructureQuery>,
) -> Result<Response, ApiError> {
    let ready = store.session(&id)?.ready()?;
    let filter: FilterSpec = match q.filters.as_deref() {
        Some(raw) => raw.parse().map_err(|e: convlens_core::view::FilterParseError| ApiError::BadRequest(e.to_string()))?,
        None => FilterSpec::default(),
    };
    Ok(json_bytes(StatusCode::OK, &structure_view(&ready.state, &filter)))
}

async fn turn(State(store): State<Arc<Store>>, Path((id, n)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ready = store.session(&id)?.ready()?;
    let index: usize = n
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("turn index {n:?} is not a number")))?;
    let turn = annotated_turn(&ready.state, index).ok_or(ApiError::UnknownTurn(index))?;
    Ok(json_bytes(StatusCode::OK, &turn))
}

async fn stats(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let ready = store.session(&id)?.ready()?;
    Ok(json_bytes(StatusCode::OK, &ready.stats))
}

async fn artifact(
    State(store): State<Arc<Store>>,
    Path((id, aid)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let session = store.session(&id)?;
    let ready = session.ready()?;
    let a = ready
        .state
        .artifact_registry
        .get(&aid)
        .ok_or_else(|| ApiError::UnknownArtifact(aid.clone()))?;
    let path = session
        .artifact_file(&a.path)
        .ok_or_else(|| ApiError::UnknownArtifact(aid.clone()))?;
    let bytes = std::fs::read(&path).map_err(|e| ApiError::Internal(format!("artifact {aid}: {e}")))?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, a.media_type.clone())], bytes).into_response())
}

async fn create_composition(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = store.session(&id)?;
    Ok(json_bytes(StatusCode::CREATED, &store.create_composition(&session)?))
}

async fn get_composition(
    State(store): State<Arc<Store>>,
    Path((id, cid)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let session = store.session(&id)?;
    Ok(json_bytes(StatusCode::OK, &store.composition(&session, &cid)?))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PatchBody {
    Many { ops: Vec<CompositionOp> },
    List(Vec<CompositionOp>),
    One(CompositionOp),
}

#[derive(Serialize)]
struct PatchReply {
    composition: Composition,
    block_ids: Vec<u64>,
}

async fn patch_composition(
    State(store): State<Arc<Store>>,
    Path((id, cid)): Path<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ops = match parse_body::<PatchBody>(&body)? {
        PatchBody::Many { ops } | PatchBody::List(ops) => ops,
        PatchBody::One(op) => vec![op],
    };
    let session = store.session(&id)?;
    let (composition, block_ids) = store.patch_composition(&session, &cid, &ops)?;
    Ok(json_bytes(
        StatusCode::OK,
        &PatchReply {
            composition,
            block_ids,
        },
    ))
}

async fn serialize(
    State(store): State<Arc<Store>>,
    Path((id, cid)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let session = store.session(&id)?;
    let markdown = store.serialize(&session, &cid)?;
    Ok(json_bytes(StatusCode::OK, &json!({"composition_id": cid, "markdown": markdown})))
}

#[derive(Deserialize)]
struct SummaryBody {
    length: Option<u8>,
    technical_detail: Option<u8>,
    formality: Option<u8>,
}

async fn summary(
    State(store): State<Arc<Store>>,
    Path((id, cid)): Path<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let b: SummaryBody = if body.is_empty() {
        SummaryBody {
            length: None,
            technical_detail: None,
            formality: None,
        }
    } else {
        parse_body(&body)?
    };
    let d = SummaryParams::default();
    let params = SummaryParams::new(
        b.length.unwrap_or(d.length),
        b.technical_detail.unwrap_or(d.technical_detail),
        b.formality.unwrap_or(d.formality),
    )?;
    let session = store.session(&id)?;
    let reply = blocking(move || store.summarize(&session, &cid, params)).await?;
    Ok(json_bytes(StatusCode::OK, &reply))
}
