//! Concurrent fan-out of one query to many search targets.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use bdl_core::api::{ErrorBody, SearchHit, SearchRequest, SearchResponse};
use bdl_union::http::UNION_PROVIDER_ID;
use bdl_union::UnionIndex;
use serde::{Deserialize, Serialize};

/// Anything answering the `/search` contract.
#[async_trait]
pub trait SearchTarget: Send + Sync {
    fn provider_id(&self) -> &str;
    async fn search(&self, request: &SearchRequest) -> Result<SearchResponse, String>;
}

/// A remote provider's `POST /search`.
pub struct HttpTarget {
    provider_id: String,
    base_url: String,
    client: reqwest::Client,
}

impl HttpTarget {
    pub fn new(provider_id: impl Into<String>, base_url: impl Into<String>, client: reqwest::Client) -> Self {
        HttpTarget { provider_id: provider_id.into(), base_url: base_url.into(), client }
    }
}

#[async_trait]
impl SearchTarget for HttpTarget {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    async fn search(&self, request: &SearchRequest) -> Result<SearchResponse, String> {
        let url = format!("{}/search", self.base_url.trim_end_matches('/'));
        let resp = self.client.post(url).json(request).send().await.map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            let status = resp.status();
            let detail = resp.json::<ErrorBody>().await.map(|b| b.error).unwrap_or_default();
            return Err(format!("HTTP {status} {detail}").trim_end().to_string());
        }
        resp.json().await.map_err(|e| e.to_string())
    }
}

/// The union index, queried in process.
pub struct UnionTarget(pub Arc<UnionIndex>);

#[async_trait]
impl SearchTarget for UnionTarget {
    fn provider_id(&self) -> &str {
        UNION_PROVIDER_ID
    }

    async fn search(&self, request: &SearchRequest) -> Result<SearchResponse, String> {
        bdl_union::http::search(&self.0, request).map_err(|e| e.error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStatus {
    Ok,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderOutcome {
    #[serde(rename = "provider")]
    pub provider_id: String,
    pub status: OutcomeStatus,
    pub elapsed_ms: u64,
    /// Ranked hits; empty unless the status is ok.
    #[serde(skip)]
    pub records: Vec<SearchHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProviderOutcome {
    pub fn ok(provider_id: impl Into<String>, records: Vec<SearchHit>) -> Self {
        ProviderOutcome { provider_id: provider_id.into(), status: OutcomeStatus::Ok, elapsed_ms: 0, records, error: None }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Deadlines {
    pub per_provider: Duration,
    pub overall: Duration,
}

impl Default for Deadlines {
    fn default() -> Self {
        Deadlines { per_provider: Duration::from_millis(2000), overall: Duration::from_millis(5000) }
    }
}

/// Sends `request` to every target at once. Outcomes come back in target
/// order; a target still running at its deadline is reported as a timeout.
pub async fn broadcast(targets: &[Arc<dyn SearchTarget>], request: &SearchRequest, deadlines: Deadlines) -> Vec<ProviderOutcome> {
    let started = Instant::now();
    let limit = deadlines.per_provider.min(deadlines.overall);
    let calls = targets.iter().map(|target| {
        let target = target.clone();
        let request = request.clone();
        async move {
            // Own task, so a target that blocks its thread cannot hold up
            // the others.
            let call = tokio::spawn(async move { target.search(&request).await });
            let abort = call.abort_handle();
            let result = tokio::time::timeout_at((started + limit).into(), call).await;
            abort.abort();
            result
        }
    });
    let results = futures::future::join_all(calls).await;
    targets
        .iter()
        .zip(results)
        .map(|(target, result)| {
            let elapsed_ms = started.elapsed().as_millis() as u64;
            let provider_id = target.provider_id().to_string();
            let (status, records, error) = match result {
                Ok(Ok(Ok(resp))) => (OutcomeStatus::Ok, resp.records, None),
                Ok(Ok(Err(e))) => (OutcomeStatus::Error, Vec::new(), Some(e)),
                Ok(Err(join)) => (OutcomeStatus::Error, Vec::new(), Some(join.to_string())),
                Err(_) => (OutcomeStatus::Timeout, Vec::new(), Some(format!("no answer within {} ms", limit.as_millis()))),
            };
            ProviderOutcome { provider_id, status, elapsed_ms, records, error }
        })
        .collect()
}
