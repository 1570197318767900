//! HTTP front end for campaign registration and context lookups.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::campaign::{CampaignRegistry, CampaignSpec};
use super::lut::{build_context_lut, ContextLut};
use crate::error::Result;
use crate::ingest::SceneBoundary;
use crate::search::SceneTags;
use crate::store::EmbeddingStore;

pub struct AppState {
    store: Arc<EmbeddingStore>,
    boundaries: Arc<Vec<SceneBoundary>>,
    tags: Arc<SceneTags>,
    registry: Mutex<CampaignRegistry>,
    lut: RwLock<Arc<ContextLut>>,
    build_lock: tokio::sync::Mutex<()>,
    lut_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: EmbeddingStore, boundaries: Vec<SceneBoundary>, tags: SceneTags, registry: CampaignRegistry) -> Self {
        Self {
            store: Arc::new(store),
            boundaries: Arc::new(boundaries),
            tags: Arc::new(tags),
            registry: Mutex::new(registry),
            lut: RwLock::new(Arc::new(ContextLut::default())),
            build_lock: tokio::sync::Mutex::new(()),
            lut_path: None,
        }
    }

    /// Snapshot path written after every build.
    pub fn with_snapshot(mut self, path: PathBuf) -> Self {
        self.lut_path = Some(path);
        self
    }

    pub fn with_lut(self, lut: ContextLut) -> Self {
        self.swap_lut(lut);
        self
    }

    /// Readers holding the previous `Arc` keep a complete old table.
    pub fn swap_lut(&self, lut: ContextLut) {
        *self.lut.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(lut);
    }

    pub fn lut(&self) -> Arc<ContextLut> {
        Arc::clone(&self.lut.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Builds from the currently registered campaigns and swaps the result in.
    pub async fn rebuild(self: &Arc<Self>) -> Result<Arc<ContextLut>> {
        let _guard = self.build_lock.lock().await;
        let campaigns = self.registry.lock().unwrap_or_else(|e| e.into_inner()).specs();
        let state = Arc::clone(self);
        let lut = tokio::task::spawn_blocking(move || {
            let lut = build_context_lut(&state.store, &campaigns, &state.boundaries, &state.tags)?;
            if let Some(p) = &state.lut_path {
                lut.save(p)?;
            }
            Ok::<_, crate::error::Error>(lut)
        })
        .await
        .expect("LUT build task panicked")?;
        self.swap_lut(lut);
        Ok(self.lut())
    }
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn register(State(state): State<Arc<AppState>>, Json(spec): Json<CampaignSpec>) -> Response {
    let outcome = state.registry.lock().unwrap_or_else(|e| e.into_inner()).register(spec);
    match outcome {
        Ok(reg) => {
            tracing::info!(campaign = %reg.campaign_id, version = reg.version, changed = reg.changed, "campaign registered");
            Json(reg).into_response()
        }
        Err(errors) => error(StatusCode::UNPROCESSABLE_ENTITY, json!({ "errors": errors })),
    }
}

async fn get_campaign(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let registry = state.registry.lock().unwrap_or_else(|e| e.into_inner());
    match registry.get(&id) {
        Some(c) => Json(c.spec.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, json!({ "error": format!("unknown campaign `{id}`") })),
    }
}

async fn build(State(state): State<Arc<AppState>>) -> Response {
    match state.rebuild().await {
        Ok(lut) => {
            tracing::info!(version = lut.version(), entries = lut.len(), "LUT rebuilt");
            Json(json!({ "version": lut.version(), "entries": lut.len() })).into_response()
        }
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string() })),
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ContextQuery {
    pub content_id: String,
    pub t: f64,
}

async fn context(State(state): State<Arc<AppState>>, Query(q): Query<ContextQuery>) -> Response {
    if !q.t.is_finite() {
        return error(StatusCode::BAD_REQUEST, json!({ "error": "t must be finite" }));
    }
    let lut = state.lut();
    match lut.lookup(&q.content_id, q.t) {
        Some(entry) => Json(entry).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let lut = state.lut();
    Json(json!({
        "status": "ok",
        "store_version": state.store.version(),
        "lut_version": lut.version(),
        "lut_entries": lut.len(),
    }))
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/campaigns", post(register))
        .route("/campaigns/{id}", get(get_campaign))
        .route("/lut/build", post(build))
        .route("/context", get(context))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).await
}
