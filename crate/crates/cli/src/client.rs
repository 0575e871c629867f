//! HTTP clients for the gateway API and a provider's endpoints.

use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use bdl_core::codec::WireRecord;
use bdl_core::dc::{DocumentKind, MetadataRecord};
use bdl_core::harvest::{parse_response, HarvestErrorCode, ResponseBody};
use bdl_provider::http::{DeleteRequest, SubmitMetadata, UpdateRequest, WriteAck};
use bdl_union::{HarvestJob, JobKind, JobState, ProviderDescriptor};
use serde::de::DeserializeOwned;
use serde_json::Value;

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    let status = resp.status();
    if !status.is_success() {
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        let msg = body.get("error").and_then(Value::as_str).unwrap_or("");
        let mut text = format!("HTTP {status}: {msg}");
        if let Some(off) = body.get("offset").and_then(Value::as_u64) {
            text.push_str(&format!(" (at offset {off})"));
        }
        if let Some(v) = body.get("violations").and_then(Value::as_array) {
            for line in v {
                text.push_str(&format!("\n  {}", line.as_str().unwrap_or_default()));
            }
        }
        bail!(text);
    }
    Ok(resp.json().await?)
}

#[derive(Clone)]
pub struct GatewayClient {
    base: String,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: impl Into<String>) -> Self {
        GatewayClient { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T> {
        let resp = self.http.get(self.url(path)).query(query).send().await.with_context(|| format!("GET {path}"))?;
        decode(resp).await
    }

    pub async fn search(&self, q: &str, start: usize, max: usize) -> Result<Value> {
        self.get("/api/search", &[("q", q.to_string()), ("start", start.to_string()), ("max", max.to_string())]).await
    }

    pub async fn providers(&self) -> Result<Vec<ProviderDescriptor>> {
        self.get("/api/providers", &[]).await
    }

    pub async fn add_provider(&self, d: &ProviderDescriptor) -> Result<Vec<ProviderDescriptor>> {
        decode(self.http.post(self.url("/api/providers")).json(d).send().await?).await
    }

    pub async fn remove_provider(&self, id: &str) -> Result<Vec<ProviderDescriptor>> {
        decode(self.http.delete(self.url(&format!("/api/providers/{id}"))).send().await?).await
    }

    pub async fn run_harvest(&self, id: &str, kind: JobKind) -> Result<HarvestJob> {
        let kind = if kind == JobKind::Full { "full" } else { "incremental" };
        let resp = self.http.post(self.url(&format!("/api/harvest/{id}/run"))).query(&[("kind", kind)]).send().await?;
        decode(resp).await
    }

    pub async fn jobs(&self) -> Result<Vec<HarvestJob>> {
        self.get("/api/harvest/jobs", &[]).await
    }

    /// Polls until the job reaches a terminal state.
    pub async fn wait_job(&self, job_id: u64, poll: Duration) -> Result<HarvestJob> {
        loop {
            let jobs = self.jobs().await?;
            let job = jobs.into_iter().find(|j| j.job_id == job_id).ok_or_else(|| anyhow!("job {job_id} vanished"))?;
            if matches!(job.state, JobState::Succeeded | JobState::Failed) {
                return Ok(job);
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn checkpoints(&self) -> Result<Value> {
        self.get("/api/checkpoints", &[]).await
    }

    pub async fn ingest(&self, directory: &std::path::Path, provider_id: &str) -> Result<HarvestJob> {
        let body = serde_json::json!({ "directory": directory, "providerId": provider_id });
        decode(self.http.post(self.url("/api/ingest")).json(&body).send().await?).await
    }

    pub async fn index_stats(&self, provider_id: Option<&str>) -> Result<Value> {
        let q: Vec<_> = provider_id.map(|p| ("providerId", p.to_string())).into_iter().collect();
        self.get("/api/index", &q).await
    }

    pub async fn index_entries(&self, provider_id: &str) -> Result<Vec<Value>> {
        self.get("/api/index/entries", &[("providerId", provider_id.to_string())]).await
    }
}

#[derive(Clone)]
pub struct ProviderClient {
    base: String,
    http: reqwest::Client,
}

impl ProviderClient {
    pub fn new(base: impl Into<String>) -> Self {
        ProviderClient { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn submit(&self, kind: DocumentKind, metadata: MetadataRecord) -> Result<WriteAck> {
        let part = reqwest::multipart::Part::text(serde_json::to_string(&SubmitMetadata { kind, metadata })?)
            .mime_str("application/json")?;
        let form = reqwest::multipart::Form::new().part("metadata", part);
        decode(self.http.post(format!("{}/submit", self.base)).multipart(form).send().await?).await
    }

    pub async fn update(&self, identifier: &str, metadata: MetadataRecord) -> Result<WriteAck> {
        let body = UpdateRequest { identifier: identifier.to_string(), metadata };
        decode(self.http.post(format!("{}/update", self.base)).json(&body).send().await?).await
    }

    pub async fn delete(&self, identifier: &str) -> Result<WriteAck> {
        let body = DeleteRequest { identifier: identifier.to_string() };
        decode(self.http.post(format!("{}/delete", self.base)).json(&body).send().await?).await
    }

    /// Every record the provider exposes, tombstones included, following
    /// resumption tokens.
    pub async fn list_records(&self) -> Result<Vec<WireRecord>> {
        let mut out = Vec::new();
        let mut params = vec![("verb", "ListRecords".to_string())];
        loop {
            let bytes = self.http.get(format!("{}/oai", self.base)).query(&params).send().await?.bytes().await?;
            let resp = parse_response(&bytes).map_err(|e| anyhow!("bad harvest response: {e}"))?;
            match resp.body {
                ResponseBody::Records { records, token } => {
                    out.extend(records);
                    match token {
                        Some(t) if !t.token.as_str().is_empty() => {
                            params = vec![("verb", "ListRecords".to_string()), ("resumptionToken", t.token.0)];
                        }
                        _ => return Ok(out),
                    }
                }
                ResponseBody::Error(e) if e.code == HarvestErrorCode::NoRecordsMatch => return Ok(out),
                ResponseBody::Error(e) => bail!("harvest error {}: {}", e.code.as_str(), e.message),
                _ => bail!("unexpected harvest response"),
            }
        }
    }
}
