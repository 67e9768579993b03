mod common;

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use positionlab::fingerprint::{build_fingerprint, flatten, AgentKind, FingerprintSet};
use positionlab::pipeline::Workspace;
use positionlab::session::{place, PlacementMode};
use positionlab::synthetic::policy_label;
use positionlab_cli::server::{router, AppState, ServerConfig};
use positionlab_cli::sessions::Artifacts;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{fixture, scratch};

fn make_app(ws: &std::path::Path) -> Router {
    let config = ServerConfig {
        neighbors: 5,
        per_stratum: 4,
        seed: 1,
        ..Default::default()
    };
    router(
        Arc::new(AppState::load(&Workspace::new(ws), config).unwrap()),
        None,
    )
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    headers: &[(&str, &str)],
) -> (StatusCode, HeaderMap, Bytes) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, bytes)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, _, b) = call(app, "GET", uri, None, &[]).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, _, b) = call(app, "POST", uri, Some(body), &[]).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(0.0, 1.0))
}

/// Every file in the workspace outside `sessions/`, by relative path.
fn artifact_bytes(ws: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![ws.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().unwrap() != "sessions" {
                    stack.push(p);
                }
            } else {
                out.insert(
                    p.strip_prefix(ws).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[tokio::test]
async fn map_is_served_with_etag_and_304() {
    let f = fixture("api");
    let app = make_app(&f.ws);
    let (status, headers, body) = call(&app, "GET", "/api/map", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        body.as_ref(),
        std::fs::read(f.ws.join("map.json")).unwrap().as_slice()
    );
    let etag = headers[header::ETAG].to_str().unwrap().to_string();
    assert!(etag.starts_with('"') && etag.len() == 66);

    let (status, headers, body) =
        call(&app, "GET", "/api/map", None, &[("if-none-match", &etag)]).await;
    assert_eq!(status, StatusCode::NOT_MODIFIED);
    assert_eq!(headers[header::ETAG].to_str().unwrap(), etag);
    assert!(body.is_empty());

    let (status, _, _) = call(
        &app,
        "GET",
        "/api/map",
        None,
        &[("if-none-match", "\"stale\"")],
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn missing_artifacts_answer_503_with_a_reason() {
    let app = make_app(&scratch("api-empty"));
    for uri in [
        "/api/map",
        "/api/clusters",
        "/api/items/x",
        "/api/annotators/a/neighbors",
    ] {
        let (status, body) = get_json(&app, uri).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_eq!(body["schema_version"], 1);
        assert!(
            body["error"].as_str().unwrap().contains("positionlab"),
            "{uri}: {body}"
        );
    }
    let (status, _) = post_json(&app, "/api/sessions", json!({})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = get_json(&app, "/api/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn neighbors_match_brute_force_cosine() {
    let f = fixture("api");
    let app = make_app(&f.ws);
    let set: FingerprintSet =
        serde_json::from_slice(&std::fs::read(f.ws.join("fingerprints.json")).unwrap()).unwrap();
    for me in set.agents.iter().step_by(17) {
        let (status, body) = get_json(
            &app,
            &format!("/api/annotators/{}/neighbors?k=5", me.agent_id),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let mut want: Vec<(f64, String)> = set
            .agents
            .iter()
            .filter(|o| o.agent_id != me.agent_id)
            .filter_map(|o| cosine(&flatten(me), &flatten(o)).map(|s| (s, o.agent_id.clone())))
            .collect();
        want.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let got = body["neighbors"].as_array().unwrap();
        assert_eq!(got.len(), 5);
        for (g, (score, id)) in got.iter().zip(&want) {
            assert_eq!(g["agent_id"].as_str().unwrap(), id);
            assert!((g["score"].as_f64().unwrap() - score).abs() < 1e-12);
        }
    }
    let (status, body) = get_json(
        &app,
        &format!(
            "/api/annotators/{}/neighbors?k=3&space=embedding",
            set.agents[0].agent_id
        ),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, _) = get_json(
        &app,
        &format!("/api/annotators/{}/neighbors?k=0", set.agents[0].agent_id),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = get_json(&app, "/api/annotators/nobody/neighbors").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn read_endpoints() {
    let f = fixture("api");
    let app = make_app(&f.ws);
    let set: FingerprintSet =
        serde_json::from_slice(&std::fs::read(f.ws.join("fingerprints.json")).unwrap()).unwrap();
    let crowd = &set.agents[0].agent_id;

    let (status, body) = get_json(&app, &format!("/api/annotators/{crowd}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["kind"], "crowd");
    assert_eq!(body["coordinate"].as_array().unwrap().len(), 2);
    assert_eq!(body["matrix"].as_array().unwrap().len(), 3);

    let (status, body) = get_json(&app, "/api/annotators/model%2Fall%2FC=1").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["kind"], "model");
    assert!(body["coordinate"].is_array());
    let (status, _) = get_json(&app, "/api/annotators/nobody").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, clusters) = get_json(&app, "/api/clusters").await;
    assert_eq!(status, StatusCode::OK);
    let n = clusters["clusters"].as_array().unwrap().len();
    assert!(n >= 2);
    let sizes: u64 = clusters["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["size"].as_u64().unwrap())
        .sum();
    assert_eq!(
        sizes + clusters["noise"].as_u64().unwrap(),
        set.len() as u64
    );

    let item = &f.population.corpus.items()[0];
    let (status, body) = get_json(&app, &format!("/api/items/{}", item.item_id)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["text"], item.text.as_str());
    assert_eq!(body["topics"].as_array().unwrap().len(), 3);
    let (status, _) = get_json(&app, "/api/items/no-such-item").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _, bytes) = call(&app, "GET", "/api/clusters/0/1/divergence", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        bytes.as_ref(),
        std::fs::read(f.ws.join("divergence/0-1.json"))
            .unwrap()
            .as_slice()
    );
    let (status, body) = get_json(&app, "/api/clusters/1/0/divergence").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("diverge"));
    let (status, _) = get_json(&app, "/api/clusters/0/0/divergence").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get_json(&app, &format!("/api/clusters/0/{n}/divergence")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_flow() {
    let f = fixture("api");
    let app = make_app(&f.ws);
    let corpus = &f.population.corpus;
    let before = artifact_bytes(&f.ws);

    let (status, created) = post_json(
        &app,
        "/api/sessions",
        json!({ "session_id": "flow", "per_stratum": 2 }),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(created["agent_id"], "data_scientist/flow");
    let queue_len = created["queue_length"].as_u64().unwrap() as usize;
    assert!(queue_len > 0);
    let (status, _) = post_json(&app, "/api/sessions", json!({ "session_id": "flow" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = post_json(&app, "/api/sessions", json!({ "session_id": "../x" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, next) = get_json(&app, "/api/sessions/flow/next").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["complete"], false);
    let first = next["item"]["item_id"].as_str().unwrap().to_string();
    assert!(!next["item"]["text"].as_str().unwrap().is_empty());
    assert_eq!(next["item"]["scale"].as_array().unwrap().len(), 5);

    let (status, _) = post_json(
        &app,
        "/api/sessions/flow/labels",
        json!({ "item_id": first, "label": 7 }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json(
        &app,
        "/api/sessions/flow/labels",
        json!({ "item_id": "not-queued", "label": 0 }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json(&app, "/api/sessions/flow/labels", json!({ "item": first })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut labeled = 0;
    loop {
        let (_, next) = get_json(&app, "/api/sessions/flow/next").await;
        if next["complete"] == true {
            assert!(next["item"].is_null());
            break;
        }
        let id = next["item"]["item_id"].as_str().unwrap();
        let idx = corpus.item_index(id).unwrap();
        let label = policy_label(1, f.population.dominant[idx], 3);
        let (status, placement) = post_json(
            &app,
            "/api/sessions/flow/labels",
            json!({ "item_id": id, "label": label }),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{placement}");
        labeled += 1;
        assert_eq!(placement["labeled"], labeled);
        assert_eq!(placement["neighbors"].as_array().unwrap().len(), 5);
        assert_eq!(placement["coordinate"].as_array().unwrap().len(), 2);
    }
    assert_eq!(labeled, queue_len);
    let (status, _) = post_json(
        &app,
        "/api/sessions/flow/labels",
        json!({ "item_id": first, "label": 0 }),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, placement) = get_json(&app, "/api/sessions/flow/placement").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(placement["labeled"], queue_len);

    // a fresh server resumes the session from its log
    let again = make_app(&f.ws);
    let (status, resumed) = get_json(&again, "/api/sessions/flow/placement").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resumed, placement);
    let log = std::fs::read_to_string(f.ws.join("sessions/flow.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1 + queue_len);

    // only session logs changed
    assert_eq!(artifact_bytes(&f.ws), before);

    let (status, _) = get_json(&app, "/api/sessions/ghost/next").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, generated) = post_json(&app, "/api/sessions", Value::Null).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{generated}");
    let (status, _, body) = call(&app, "POST", "/api/sessions", None, &[]).await;
    assert_eq!(status, StatusCode::CREATED);
    let generated: Value = serde_json::from_slice(&body).unwrap();
    assert!(generated["session_id"]
        .as_str()
        .unwrap()
        .starts_with("session-"));
}

#[test]
fn copied_labels_place_next_to_their_source() {
    let f = fixture("api");
    let art = Artifacts::load(&Workspace::new(&f.ws)).unwrap();
    for source in art.fingerprints.agents.iter().step_by(23) {
        let a = art.corpus.annotator_index(&source.agent_id).unwrap();
        let pairs: Vec<(&[f64], i32)> = art
            .corpus
            .annotator_annotations(a)
            .map(|ann| (art.model.doc_topic[ann.item].as_slice(), ann.label))
            .collect();
        let copy = build_fingerprint(
            "copy",
            AgentKind::DataScientist,
            &pairs,
            art.corpus.scheme(),
            3,
        )
        .unwrap();
        let p = place(&art.ctx(), &copy, 3, PlacementMode::Projection).unwrap();
        assert_eq!(p.neighbors[0].agent_id, source.agent_id);
        assert!((p.neighbors[0].score - 1.0).abs() < 1e-12);
    }
}
