//! The gateway's HTTP API.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use bdl_core::api::ErrorBody;
use bdl_core::dc::MetadataRecord;
use bdl_core::harvest::Datestamp;
use bdl_union::{HarvestJob, JobKind, ProviderDescriptor, StartError};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;

use crate::gateway::{Gateway, HarvestRequestError, SearchError, UnifiedResponse};
use crate::registry::RegistryError;

struct ApiError(StatusCode, ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, ErrorBody::new(msg))
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match &e {
            SearchError::Syntax(s) => ApiError(StatusCode::BAD_REQUEST, ErrorBody::from(s)),
            SearchError::EmptyWindow => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match e {
            RegistryError::Duplicate(_) => StatusCode::CONFLICT,
            RegistryError::Unknown(_) => StatusCode::NOT_FOUND,
            RegistryError::Invalid(_) => StatusCode::BAD_REQUEST,
            RegistryError::Storage { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<HarvestRequestError> for ApiError {
    fn from(e: HarvestRequestError) -> Self {
        let status = match e {
            HarvestRequestError::UnknownProvider(_) => StatusCode::NOT_FOUND,
            HarvestRequestError::Start(StartError::AlreadyRunning(_)) => StatusCode::CONFLICT,
            HarvestRequestError::Start(StartError::NotHarvestable(_)) => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

type Shared = State<Arc<Gateway>>;

#[derive(Deserialize)]
struct SearchParams {
    q: Option<String>,
    #[serde(default)]
    start: usize,
    #[serde(default = "default_max")]
    max: usize,
}

fn default_max() -> usize {
    10
}

async fn search(State(gw): Shared, Query(p): Query<SearchParams>) -> Result<Json<UnifiedResponse>, ApiError> {
    let q = p.q.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `q`"))?;
    Ok(Json(gw.unified_search(&q, p.start, p.max).await?))
}

async fn list_providers(State(gw): Shared) -> Json<Vec<ProviderDescriptor>> {
    Json((*gw.registry().list()).clone())
}

async fn add_provider(State(gw): Shared, body: axum::body::Bytes) -> Result<(StatusCode, Json<Vec<ProviderDescriptor>>), ApiError> {
    let d: ProviderDescriptor =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let list = gw.registry().add(d)?;
    Ok((StatusCode::CREATED, Json((*list).clone())))
}

async fn remove_provider(State(gw): Shared, Path(id): Path<String>) -> Result<Json<Vec<ProviderDescriptor>>, ApiError> {
    Ok(Json((*gw.registry().remove(&id)?).clone()))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RemoveParams {
    provider_id: String,
}

async fn remove_provider_query(State(gw): Shared, Query(p): Query<RemoveParams>) -> Result<Json<Vec<ProviderDescriptor>>, ApiError> {
    Ok(Json((*gw.registry().remove(&p.provider_id)?).clone()))
}

#[derive(Deserialize)]
struct RunParams {
    kind: Option<String>,
}

async fn run_harvest(
    State(gw): Shared,
    Path(id): Path<String>,
    Query(p): Query<RunParams>,
) -> Result<(StatusCode, Json<HarvestJob>), ApiError> {
    let kind = match p.kind.as_deref() {
        None | Some("incremental") => JobKind::Incremental,
        Some("full") => JobKind::Full,
        Some(other) => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown kind `{other}`"))),
    };
    Ok((StatusCode::ACCEPTED, Json(gw.start_harvest(&id, kind)?)))
}

async fn jobs(State(gw): Shared) -> Json<Vec<HarvestJob>> {
    Json(gw.harvester().jobs())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CheckpointView {
    provider_id: String,
    last_success_until: Datestamp,
}

async fn checkpoints(State(gw): Shared) -> Json<Vec<CheckpointView>> {
    Json(
        gw.index()
            .checkpoints()
            .into_iter()
            .map(|(provider_id, last_success_until)| CheckpointView { provider_id, last_success_until })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct IndexParams {
    provider_id: Option<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct IndexStats {
    entries: usize,
    live: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EntryView {
    provider_id: String,
    identifier: String,
    datestamp: Datestamp,
    deleted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<MetadataRecord>,
}

fn selected(gw: &Gateway, provider: Option<&str>) -> Vec<bdl_union::IndexedEntry> {
    gw.index().entries().into_iter().filter(|e| provider.is_none_or(|p| e.provider_id == p)).collect()
}

async fn index_stats(State(gw): Shared, Query(p): Query<IndexParams>) -> Json<IndexStats> {
    let entries = selected(&gw, p.provider_id.as_deref());
    Json(IndexStats { entries: entries.len(), live: entries.iter().filter(|e| e.is_live()).count() })
}

/// Every entry, ordered by provider and identifier.
async fn index_entries(State(gw): Shared, Query(p): Query<IndexParams>) -> Json<Vec<EntryView>> {
    Json(
        selected(&gw, p.provider_id.as_deref())
            .into_iter()
            .map(|e| EntryView {
                provider_id: e.provider_id,
                identifier: e.header.identifier,
                datestamp: e.header.datestamp,
                deleted: e.header.deleted,
                record: e.record,
            })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct IngestRequest {
    directory: PathBuf,
    provider_id: String,
}

async fn ingest(State(gw): Shared, body: axum::body::Bytes) -> Result<Json<HarvestJob>, ApiError> {
    let req: IngestRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if !bdl_core::dc::is_valid_token(&req.provider_id) || req.provider_id == "union" {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("invalid provider id `{}`", req.provider_id)));
    }
    let harvester = gw.harvester().clone();
    let job = tokio::task::spawn_blocking(move || harvester.ingest_files(&req.directory, &req.provider_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::from(HarvestRequestError::Start(e)))?;
    Ok(Json(job))
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    let api = Router::new()
        .route("/api/search", get(search))
        .route("/api/providers", get(list_providers).post(add_provider).delete(remove_provider_query))
        .route("/api/providers/{id}", delete(remove_provider))
        .route("/api/harvest/{id}/run", post(run_harvest))
        .route("/api/harvest/jobs", get(jobs))
        .route("/api/checkpoints", get(checkpoints))
        .route("/api/ingest", post(ingest))
        .route("/api/index", get(index_stats))
        .route("/api/index/entries", get(index_entries))
        .with_state(gateway.clone());
    api.nest("/union", bdl_union::http::router(gateway.index().clone())).layer(CorsLayer::permissive())
}

/// A gateway served on a background task.
pub struct GatewayServer {
    addr: SocketAddr,
    gateway: Arc<Gateway>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl GatewayServer {
    pub async fn bind(gateway: Arc<Gateway>, addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Ok(Self::spawn(gateway, listener))
    }

    pub fn spawn(gateway: Arc<Gateway>, listener: TcpListener) -> Self {
        let addr = listener.local_addr().expect("bound listener has an address");
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(gateway.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        GatewayServer { addr, gateway, shutdown: Some(tx), task }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}
