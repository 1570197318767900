use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use contextiq::ad::{router, AppState, CampaignRegistry, CampaignSpec, ContextEntry, ContextLut};
use contextiq::synth::{self, SynthCorpus, SynthParams};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body)).unwrap()
}

fn setup() -> (SynthCorpus, Arc<AppState>, Router) {
    let corpus = synth::generate(SynthParams::default()).unwrap();
    let state = Arc::new(AppState::new(
        corpus.store().unwrap(),
        corpus.boundaries.clone(),
        corpus.tags(),
        CampaignRegistry::new(),
    ));
    let app = router(state.clone());
    (corpus, state, app)
}

#[tokio::test]
async fn register_get_round_trips_byte_identical() {
    let (corpus, _, app) = setup();
    let mut spec = corpus.campaigns[0].clone();
    spec.score_floor = Some(f64::INFINITY);
    let body = serde_json::to_vec(&spec).unwrap();
    let (status, reg) = call(&app, post_json("/campaigns", body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let reg: Value = serde_json::from_slice(&reg).unwrap();
    assert_eq!(reg["version"], 1);
    assert_eq!(reg["changed"], true);

    let (status, back) = call(&app, get(&format!("/campaigns/{}", spec.campaign_id))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(back, body);

    let (_, again) = call(&app, post_json("/campaigns", body)).await;
    let again: Value = serde_json::from_slice(&again).unwrap();
    assert_eq!((again["version"].clone(), again["changed"].clone()), (Value::from(1), Value::from(false)));

    let (status, _) = call(&app, get("/campaigns/nope")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_campaigns_get_field_errors() {
    let (_, _, app) = setup();
    let bad = CampaignSpec {
        campaign_id: "c".into(),
        max_scenes: Some(0),
        ..CampaignSpec::default()
    };
    let (status, body) = call(&app, post_json("/campaigns", serde_json::to_vec(&bad).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = serde_json::from_slice(&body).unwrap();
    let fields: Vec<&str> = body["errors"].as_array().unwrap().iter().map(|e| e["field"].as_str().unwrap()).collect();
    assert_eq!(fields, ["queries", "max_scenes"]);

    let (status, _) = call(&app, post_json("/campaigns", br#"{"score_floor":"-inf","campaign_id":"x","queries":[{"text":"a","embeddings":{"text":[1.0]}}]}"#.to_vec())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn build_then_lookup() {
    let (corpus, _, app) = setup();
    for c in &corpus.campaigns {
        let (status, _) = call(&app, post_json("/campaigns", serde_json::to_vec(c).unwrap())).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, body) = call(&app, Request::post("/lut/build").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let built: Value = serde_json::from_slice(&body).unwrap();
    assert!(built["entries"].as_u64().unwrap() > 0);

    let (_, health) = call(&app, get("/healthz")).await;
    let health: Value = serde_json::from_slice(&health).unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["lut_version"], built["version"]);

    let (q, scene) = corpus.planted.iter().next().unwrap();
    let b = corpus.boundaries.iter().find(|b| &b.scene_id == scene).unwrap();
    let (status, body) = call(&app, get(&format!("/context?content_id={}&t={}", b.content_id, b.start_s))).await;
    assert_eq!(status, StatusCode::OK, "planted scene for {q}");
    let entry: ContextEntry = serde_json::from_slice(&body).unwrap();
    assert_eq!(&entry.scene_id, scene);

    let (status, _) = call(&app, get("/context?content_id=missing&t=1")).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, get(&format!("/context?content_id={}&t=-1", b.content_id))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, get(&format!("/context?content_id={}&t=NaN", b.content_id))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, get(&format!("/context?content_id={}&t=inf", b.content_id))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_registry_builds_an_empty_table() {
    let (_, state, app) = setup();
    let (status, _) = call(&app, Request::post("/lut/build").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(state.lut().is_empty());
}

fn uniform_lut(tag: &str) -> ContextLut {
    let entries = (0..200)
        .map(|i| ContextEntry {
            content_id: "movie".into(),
            scene_id: format!("s{i}"),
            start_s: f64::from(i),
            end_s: f64::from(i + 1),
            campaign_ids: vec![tag.into()],
            best_scores: BTreeMap::from([(tag.to_string(), 1.0)]),
            matched_queries: BTreeMap::from([(tag.to_string(), "q".to_string())]),
        })
        .collect();
    ContextLut::from_entries(entries, tag.into()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn readers_never_see_a_mixed_table() {
    let (_, state, _) = setup();
    state.swap_lut(uniform_lut("a"));
    let stop = Arc::new(AtomicBool::new(false));
    let mut readers = Vec::new();
    for _ in 0..4 {
        let state = state.clone();
        let stop = stop.clone();
        readers.push(tokio::task::spawn_blocking(move || {
            let mut reads = 0u64;
            loop {
                let lut = state.lut();
                let tag = lut.config_hash().to_string();
                for t in 0..200 {
                    let e = lut.lookup("movie", f64::from(t) + 0.5).unwrap();
                    assert_eq!(e.campaign_ids, std::slice::from_ref(&tag));
                }
                reads += 1;
                if stop.load(Ordering::Relaxed) {
                    break reads;
                }
            }
        }));
    }
    for i in 0..200 {
        state.swap_lut(uniform_lut(if i % 2 == 0 { "b" } else { "a" }));
        tokio::task::yield_now().await;
    }
    stop.store(true, Ordering::Relaxed);
    for r in readers {
        assert!(r.await.unwrap() > 0);
    }
}

#[tokio::test]
async fn snapshot_is_written_on_build() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lut.jsonl");
    let corpus = synth::generate(SynthParams::default()).unwrap();
    let mut registry = CampaignRegistry::new();
    for c in &corpus.campaigns {
        registry.register(c.clone()).unwrap();
    }
    let state = Arc::new(
        AppState::new(corpus.store().unwrap(), corpus.boundaries.clone(), corpus.tags(), registry).with_snapshot(path.clone()),
    );
    let lut = state.rebuild().await.unwrap();
    let loaded = ContextLut::load(&path).unwrap();
    assert_eq!(loaded.version(), lut.version());
    assert_eq!(loaded.len(), lut.len());
}
