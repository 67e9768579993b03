//! HTTP API for the studio. Pipeline artifacts are loaded once at startup
//! and treated as immutable; sessions are the only mutable state and every
//! change goes through the session's event log first.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use positionlab::fingerprint::{AgentKind, FingerprintSet};
use positionlab::map::MapExport;
use positionlab::pipeline::Workspace;
use positionlab::positions::{nearest_neighbors, NeighborSpace};
use positionlab::session::{cluster_centroids, place, PlacementMode, Session};
use positionlab::{Error, SCHEMA_VERSION};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::sessions::{default_agent_id, missing, Artifacts};
use crate::Failure;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Nearest annotators reported with each placement.
    pub neighbors: usize,
    pub placement: PlacementMode,
    pub per_stratum: usize,
    pub seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            neighbors: 10,
            placement: PlacementMode::Projection,
            per_stratum: 13,
            seed: 0,
        }
    }
}

struct MapFile {
    bytes: Bytes,
    etag: String,
    parsed: MapExport,
}

pub struct AppState {
    ws: Workspace,
    config: ServerConfig,
    artifacts: Option<Artifacts>,
    missing: Vec<&'static str>,
    model_fingerprints: Option<FingerprintSet>,
    map: Option<MapFile>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl AppState {
    /// Loads whatever artifacts exist. Missing ones make the endpoints that
    /// need them answer 503; present but unreadable ones are an error.
    pub fn load(ws: &Workspace, config: ServerConfig) -> Result<Self, Failure> {
        let missing = missing(ws);
        let artifacts = if missing.is_empty() {
            Some(Artifacts::load(ws)?)
        } else {
            log::warn!("serving without {}", missing.join(", "));
            None
        };
        let model_fingerprints = if ws.exists(Workspace::MODEL_FINGERPRINTS) {
            Some(ws.load(Workspace::MODEL_FINGERPRINTS)?)
        } else {
            None
        };
        let map = if ws.exists(Workspace::MAP_JSON) {
            let path = ws.path(Workspace::MAP_JSON);
            let bytes = std::fs::read(&path)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            Some(MapFile {
                etag: format!("\"{}\"", hex::encode(Sha256::digest(&bytes))),
                parsed: ws.load_map()?,
                bytes: Bytes::from(bytes),
            })
        } else {
            None
        };
        Ok(Self {
            ws: ws.clone(),
            config,
            artifacts,
            missing,
            model_fingerprints,
            map,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(1),
        })
    }

    fn artifacts(&self) -> Result<&Artifacts, ApiError> {
        self.artifacts.as_ref().ok_or_else(|| {
            let hints: Vec<String> = self
                .missing
                .iter()
                .map(|rel| format!("{rel} (run `positionlab {}`)", producer(rel)))
                .collect();
            ApiError::unavailable(format!("missing artifacts: {}", hints.join(", ")))
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let art = self.artifacts()?;
        let mut map = self.sessions.lock().expect("session map lock");
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        if !art.session_exists(id) {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("no session `{id}`"),
            ));
        }
        let s = Arc::new(Mutex::new(art.open(id)?));
        map.insert(id.to_string(), s.clone());
        Ok(s)
    }

    fn fresh_session_id(&self, art: &Artifacts) -> String {
        loop {
            let id = format!("session-{}", self.counter.fetch_add(1, Ordering::Relaxed));
            if !art.session_exists(&id) {
                return id;
            }
        }
    }
}

fn producer(rel: &str) -> &'static str {
    match rel {
        Workspace::TOPIC_MODEL => "topics fit",
        Workspace::FINGERPRINTS => "fingerprints",
        Workspace::POSITIONS => "mine",
        Workspace::MAP_JSON => "map",
        _ => "ingest",
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownItem(_) | Error::UnknownAgent(_) | Error::UnknownAnnotator(_) => {
                StatusCode::NOT_FOUND
            }
            Error::DuplicateAnnotation { .. } | Error::DuplicateId(_) => StatusCode::CONFLICT,
            Error::LabelOutsideScheme(_) | Error::InvalidParameter(_) | Error::Session(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<Failure> for ApiError {
    fn from(f: Failure) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, f.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T = Response> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, studio: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/map", get(get_map))
        .route("/api/annotators/{id}", get(get_annotator))
        .route("/api/annotators/{id}/neighbors", get(get_neighbors))
        .route("/api/clusters", get(get_clusters))
        .route("/api/clusters/{a}/{b}/divergence", get(get_divergence))
        .route("/api/items/{id}", get(get_item))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_item))
        .route("/api/sessions/{id}/labels", post(submit_label))
        .route("/api/sessions/{id}/placement", get(get_placement))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state);
    match studio {
        Some(dir) => api.nest_service("/studio", tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: AppState, bind: &str, studio: Option<&Path>) -> Result<(), Failure> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Failure::data(format!("cannot bind {bind}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Failure::data(e.to_string()))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(Arc::new(state), studio))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Failure::data(e.to_string()))
}

async fn get_map(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult {
    let map = st.map.as_ref().ok_or_else(|| {
        ApiError::unavailable("missing artifacts: map.json (run `positionlab map`)")
    })?;
    let etag = HeaderValue::from_str(&map.etag).expect("hex etag");
    let fresh = headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|t| t.trim() == map.etag || t.trim() == "*");
    if fresh {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }
    Ok((
        [
            (header::ETAG, etag),
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/json"),
            ),
        ],
        map.bytes.clone(),
    )
        .into_response())
}

async fn get_annotator(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let art = st.artifacts()?;
    let (fp, coordinate) = if let Some(fp) = art.fingerprints.get(&id) {
        let coord = art
            .positions
            .embedding
            .index_of(&id)
            .map(|i| art.positions.embedding.coords[i].clone());
        (fp, coord)
    } else if let Some(fp) = st.model_fingerprints.as_ref().and_then(|m| m.get(&id)) {
        let coord = st
            .map
            .as_ref()
            .and_then(|m| m.parsed.points.iter().find(|p| p.agent_id == id))
            .map(|p| vec![p.x, p.y]);
        (fp, coord)
    } else {
        return Err(Error::UnknownAgent(id).into());
    };
    let annotations = match fp.agent_kind {
        AgentKind::Crowd => art
            .corpus
            .annotator_index(&id)
            .map(|a| art.corpus.annotator_annotation_count(a)),
        _ => None,
    };
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "id": fp.agent_id,
        "kind": fp.agent_kind,
        "cluster": art.positions.cluster_of(&id),
        "coordinate": coordinate,
        "annotations": annotations,
        "labels": art.fingerprints.labels,
        "support": fp.support,
        "matrix": fp.matrix,
    })))
}

#[derive(Deserialize)]
struct NeighborQuery {
    k: Option<usize>,
    space: Option<NeighborSpace>,
}

async fn get_neighbors(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NeighborQuery>,
) -> ApiResult<Json<Value>> {
    let art = st.artifacts()?;
    let space = q.space.unwrap_or(NeighborSpace::Fingerprint);
    let k = q.k.unwrap_or(st.config.neighbors);
    let neighbors = nearest_neighbors(
        &art.fingerprints,
        Some(&art.positions.embedding),
        &id,
        k,
        space,
    )?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "id": id,
        "space": space,
        "k": k,
        "neighbors": neighbors,
    })))
}

async fn get_clusters(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let art = st.artifacts()?;
    let p = &art.positions;
    let centroids = cluster_centroids(&art.fingerprints, p);
    let clusters: Vec<Value> = p
        .cluster_sizes
        .iter()
        .enumerate()
        .map(|(id, size)| json!({ "id": id, "size": size, "centroid": centroids[id] }))
        .collect();
    let mut strata: BTreeMap<i32, usize> = BTreeMap::new();
    for d in p.divisiveness.values() {
        *strata.entry(*d).or_default() += 1;
    }
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "eps": p.eps,
        "noise": p.noise,
        "silhouette": p.silhouette,
        "demographic_silhouettes": p.demographic_silhouettes,
        "topics": art.fingerprints.topics,
        "labels": art.fingerprints.labels,
        "clusters": clusters,
        "divisiveness": strata,
    })))
}

async fn get_divergence(
    State(st): State<Arc<AppState>>,
    UrlPath((a, b)): UrlPath<(usize, usize)>,
) -> ApiResult {
    let art = st.artifacts()?;
    let n = art.positions.n_clusters();
    if a >= n || b >= n || a == b {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no cluster pair {a}/{b}; {n} clusters were mined"),
        ));
    }
    let rel = Workspace::divergence_rel(a, b, "json");
    let bytes = std::fs::read(st.ws.path(&rel)).map_err(|_| {
        ApiError::unavailable(format!(
            "missing artifacts: {rel} (run `positionlab diverge --clusters {a},{b}`)"
        ))
    })?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_item(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let art = st.artifacts()?;
    let idx = art.corpus.require_item(&id)?;
    let item = &art.corpus.items()[idx];
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for a in art.corpus.item_annotations(idx) {
        *counts.entry(a.label).or_default() += 1;
    }
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "id": item.item_id,
        "text": item.text,
        "annotations": art.corpus.item_annotation_count(idx),
        "label_counts": counts,
        "topics": art.model.doc_topic.get(idx),
        "modal_labels": art.positions.modal_labels.get(&id),
        "divisiveness": art.positions.divisiveness.get(&id),
    })))
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateSession {
    session_id: Option<String>,
    agent_id: Option<String>,
    per_stratum: Option<usize>,
    seed: Option<u64>,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let art = st.artifacts()?;
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("invalid request body: {e}"),
            )
        })?
    };
    let id = match req.session_id {
        Some(id) => id,
        None => st.fresh_session_id(art),
    };
    let agent_id = req.agent_id.unwrap_or_else(|| default_agent_id(&id));
    let per_stratum = req.per_stratum.unwrap_or(st.config.per_stratum);
    let seed = req.seed.unwrap_or(st.config.seed);
    let mut map = st.sessions.lock().expect("session map lock");
    let session = art.create(&id, &agent_id, per_stratum, seed)?;
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "session_id": session.session_id,
        "agent_id": session.agent_id,
        "per_stratum": session.per_stratum,
        "seed": session.seed,
        "queue_length": session.queue.len(),
    });
    map.insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn next_item(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let art = st.artifacts()?;
    let session = st.session(&id)?;
    let s = session.lock().expect("session lock");
    let item = s.next_view(&art.corpus)?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "complete": item.is_none(),
        "item": item,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    item_id: String,
    label: i32,
}

async fn submit_label(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult {
    let art = st.artifacts()?;
    let req: LabelRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("invalid request body: {e}"),
        )
    })?;
    let session = st.session(&id)?;
    let mut s = session.lock().expect("session lock");
    art.submit(&mut s, &req.item_id, req.label)
        .map_err(|e| match e {
            // the item exists as a resource but is not part of this session
            Error::UnknownItem(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            e => e.into(),
        })?;
    let placement = place(
        &art.ctx(),
        &s.fingerprint,
        st.config.neighbors,
        st.config.placement,
    )?;
    Ok(Json(placement).into_response())
}

async fn get_placement(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let art = st.artifacts()?;
    let session = st.session(&id)?;
    let s = session.lock().expect("session lock");
    let placement = place(
        &art.ctx(),
        &s.fingerprint,
        st.config.neighbors,
        st.config.placement,
    )?;
    Ok(Json(placement).into_response())
}
