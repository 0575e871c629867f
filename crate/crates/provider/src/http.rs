//! HTTP surface of a repository.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bdl_core::api::{ErrorBody, SearchHit, SearchRequest, SearchResponse};
use bdl_core::clock::Clock;
use bdl_core::dc::{DocumentKind, MetadataRecord};
use bdl_core::harvest::{render_response, Datestamp};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::store::{Document, Repository, StoreError};

/// A repository plus its clock and fault-injection knobs.
pub struct ProviderService {
    repo: Repository,
    clock: Arc<dyn Clock>,
    search_delay_ms: AtomicU64,
}

impl ProviderService {
    pub fn new(repo: Repository, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(ProviderService { repo, clock, search_delay_ms: AtomicU64::new(0) })
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn now(&self) -> Datestamp {
        self.clock.now()
    }

    /// Makes every `/search` answer sleep first. Used to simulate a slow
    /// provider.
    pub fn set_search_delay(&self, delay: Duration) {
        self.search_delay_ms.store(delay.as_millis() as u64, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitMetadata {
    pub kind: DocumentKind,
    pub metadata: MetadataRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub identifier: String,
    pub metadata: MetadataRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteRequest {
    pub identifier: String,
}

/// Body answered by `/submit`, `/update` and `/delete`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteAck {
    pub identifier: String,
    pub datestamp: Datestamp,
}

struct ApiError(StatusCode, ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, ErrorBody::new(msg))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Invalid { violations, kind } => {
                let mut body = ErrorBody::new(format!("record does not satisfy the {kind} profile"));
                body.violations = violations.iter().map(ToString::to_string).collect();
                return ApiError(StatusCode::UNPROCESSABLE_ENTITY, body);
            }
            StoreError::Query(q) => return ApiError(StatusCode::BAD_REQUEST, ErrorBody::from(q)),
            StoreError::IdDoesNotExist(_) => StatusCode::NOT_FOUND,
            StoreError::Deleted(_) | StoreError::ClockRegression { .. } => StatusCode::CONFLICT,
            StoreError::DocumentTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            StoreError::Journal(_) | StoreError::Io(_) => {
                tracing::error!(error = %e, "storage failure");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, ErrorBody::new(e.to_string()))
    }
}

type Shared = State<Arc<ProviderService>>;

async fn oai(State(svc): Shared, Query(params): Query<Vec<(String, String)>>) -> Response {
    let resp = svc.repo.harvest(&params, svc.now());
    ([(header::CONTENT_TYPE, "text/xml; charset=utf-8")], render_response(&resp)).into_response()
}

async fn search(State(svc): Shared, body: Bytes) -> Result<Json<SearchResponse>, ApiError> {
    let req: SearchRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if req.max == 0 {
        return Err(ApiError::bad_request("max must be at least 1"));
    }
    let delay = svc.search_delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    let (total, hits) = svc.repo.search_local(&req.query, req.start, req.max)?;
    Ok(Json(SearchResponse {
        provider: svc.repo.repository_id().to_string(),
        total,
        records: hits
            .into_iter()
            .map(|h| SearchHit { identifier: h.identifier, datestamp: h.datestamp, metadata: h.record, score: None })
            .collect(),
    }))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StoreError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody::new(e.to_string()))),
    }
}

async fn submit(State(svc): Shared, mut form: Multipart) -> Result<(StatusCode, Json<WriteAck>), ApiError> {
    let mut metadata: Option<SubmitMetadata> = None;
    let mut document: Option<Document> = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        match field.name() {
            Some("metadata") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                let parsed = serde_json::from_slice(&bytes)
                    .map_err(|e| ApiError::bad_request(format!("metadata part: {e}")))?;
                metadata = Some(parsed);
            }
            Some("document") => {
                let media_type = field.content_type().unwrap_or("application/octet-stream").to_string();
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                document = Some(Document { bytes: bytes.to_vec(), media_type });
            }
            other => return Err(ApiError::bad_request(format!("unexpected part {other:?}"))),
        }
    }
    let SubmitMetadata { kind, metadata } = metadata.ok_or_else(|| ApiError::bad_request("missing `metadata` part"))?;
    let now = svc.now();
    let repo = svc.clone();
    let identifier = blocking(move || repo.repo.submit(metadata, kind, document, now)).await?;
    Ok((StatusCode::CREATED, Json(WriteAck { identifier, datestamp: now })))
}

async fn update(State(svc): Shared, body: Bytes) -> Result<Json<WriteAck>, ApiError> {
    let req: UpdateRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let now = svc.now();
    let id = req.identifier.clone();
    let datestamp = blocking(move || svc.repo.update(&req.identifier, req.metadata, now)).await?;
    Ok(Json(WriteAck { identifier: id, datestamp }))
}

async fn delete(State(svc): Shared, body: Bytes) -> Result<Json<WriteAck>, ApiError> {
    let req: DeleteRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let now = svc.now();
    let id = req.identifier.clone();
    let datestamp = blocking(move || svc.repo.delete(&req.identifier, now)).await?;
    Ok(Json(WriteAck { identifier: id, datestamp }))
}

async fn document(State(svc): Shared, Path(local_id): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, ErrorBody::new(format!("no document `{local_id}`")));
    let id: u64 = local_id.parse().map_err(|_| not_found())?;
    match svc.repo.document(id)? {
        Some(doc) => Ok(([(header::CONTENT_TYPE, doc.media_type)], doc.bytes).into_response()),
        None => Err(not_found()),
    }
}

pub fn router(service: Arc<ProviderService>) -> Router {
    let limit = service.repo.config().max_document_bytes.saturating_add(1 << 20);
    Router::new()
        .route("/oai", get(oai))
        .route("/search", post(search))
        .route("/submit", post(submit))
        .route("/update", post(update))
        .route("/delete", post(delete))
        .route("/documents/{local_id}", get(document))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(service)
}

/// A provider served on a background task.
pub struct ProviderServer {
    addr: SocketAddr,
    service: Arc<ProviderService>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ProviderServer {
    pub async fn bind(service: Arc<ProviderService>, addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Ok(Self::spawn(service, listener))
    }

    pub fn spawn(service: Arc<ProviderService>, listener: TcpListener) -> Self {
        let addr = listener.local_addr().expect("bound listener has an address");
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(service.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        ProviderServer { addr, service, shutdown: Some(tx), task }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Arc<ProviderService> {
        &self.service
    }

    /// Stops accepting requests and waits for in-flight ones.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for ProviderServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}
