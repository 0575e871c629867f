//! `/search` over the union index, same shape as a provider's.

use std::sync::Arc;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{extract::State, Json, Router};
use bdl_core::api::{ErrorBody, SearchHit, SearchRequest, SearchResponse};

use crate::index::{IndexError, UnionIndex};

pub const UNION_PROVIDER_ID: &str = "union";

/// Runs a search request against the index.
pub fn search(index: &UnionIndex, req: &SearchRequest) -> Result<SearchResponse, ErrorBody> {
    if req.max == 0 {
        return Err(ErrorBody::new("max must be at least 1"));
    }
    let (total, hits) = index.query(&req.query, req.start, req.max).map_err(|e| match e {
        IndexError::Query(q) => ErrorBody::from(&q),
        other => ErrorBody::new(other.to_string()),
    })?;
    Ok(SearchResponse {
        provider: UNION_PROVIDER_ID.into(),
        total,
        records: hits
            .into_iter()
            .map(|h| SearchHit { identifier: h.identifier, datestamp: h.datestamp, metadata: h.record, score: Some(h.score) })
            .collect(),
    })
}

async fn search_handler(
    State(index): State<Arc<UnionIndex>>,
    body: Bytes,
) -> Result<Json<SearchResponse>, (StatusCode, Json<ErrorBody>)> {
    let bad = |e: ErrorBody| (StatusCode::BAD_REQUEST, Json(e));
    let req: SearchRequest = serde_json::from_slice(&body).map_err(|e| bad(ErrorBody::new(e.to_string())))?;
    search(&index, &req).map(Json).map_err(bad)
}

pub fn router(index: Arc<UnionIndex>) -> Router {
    Router::new().route("/search", post(search_handler)).with_state(index)
}
