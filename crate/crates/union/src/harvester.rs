//! Pulls records from data providers into the union index.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use bdl_core::clock::Clock;
use bdl_core::codec::{extract_dc_from_html, parse_tagged_text, write_dc, WireRecord};
use bdl_core::dc::{ElementName, MetadataRecord};
use bdl_core::harvest::{parse_response, Datestamp, HarvestErrorCode, HarvestResponse, RecordHeader, ResponseBody};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use crate::index::{ApplyOutcome, IndexError, UnionIndex};
use crate::job::{HarvestJob, JobCounts, JobKind, JobState, Mode, ProviderDescriptor};

/// Seconds subtracted from the checkpoint before an incremental harvest, to
/// absorb clock skew. Re-fetched records are no-ops.
pub const OVERLAP_SECS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Fetches one harvest response document.
#[async_trait]
pub trait HarvestTransport: Send + Sync {
    async fn fetch(&self, base_url: &str, params: &[(&'static str, String)]) -> Result<Vec<u8>, TransportError>;
}

/// `GET <baseUrl>/oai?...` over HTTP.
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder().timeout(timeout).build().expect("HTTP client configuration");
        HttpTransport { client }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

#[async_trait]
impl HarvestTransport for HttpTransport {
    async fn fetch(&self, base_url: &str, params: &[(&'static str, String)]) -> Result<Vec<u8>, TransportError> {
        let url = format!("{}/oai", base_url.trim_end_matches('/'));
        let resp = self.client.get(url).query(params).send().await.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError(format!("HTTP {status}")));
        }
        let body = resp.bytes().await.map_err(|e| TransportError(e.to_string()))?;
        Ok(body.to_vec())
    }
}

/// Attempts per request and the delay before the first retry, doubled on
/// each further retry.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn no_wait(attempts: u32) -> Self {
        RetryPolicy { attempts, initial_backoff: Duration::ZERO }
    }

    fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(retry)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("a job for provider `{0}` is already queued or running")]
    AlreadyRunning(String),
    #[error("provider `{0}` does not support harvesting")]
    NotHarvestable(String),
}

#[derive(Debug)]
enum Failure {
    Fatal(String),
    Index(IndexError),
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        Failure::Index(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Fatal(m) => f.write_str(m),
            Failure::Index(e) => write!(f, "index write failed: {e}"),
        }
    }
}

pub struct Harvester {
    index: Arc<UnionIndex>,
    transport: Arc<dyn HarvestTransport>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    active: Mutex<BTreeMap<u64, HarvestJob>>,
    next_job_id: AtomicU64,
}

impl Harvester {
    pub fn new(
        index: Arc<UnionIndex>,
        transport: Arc<dyn HarvestTransport>,
        clock: Arc<dyn Clock>,
        retry: RetryPolicy,
    ) -> Self {
        let next = index.finished_jobs().iter().map(|j| j.job_id).max().unwrap_or(0) + 1;
        Harvester { index, transport, clock, retry, active: Mutex::new(BTreeMap::new()), next_job_id: AtomicU64::new(next) }
    }

    pub fn index(&self) -> &Arc<UnionIndex> {
        &self.index
    }

    /// Finished jobs followed by queued and running ones, by job id.
    pub fn jobs(&self) -> Vec<HarvestJob> {
        let mut all = self.index.finished_jobs();
        all.extend(self.active.lock().values().cloned());
        all.sort_by_key(|j| j.job_id);
        all
    }

    pub fn job(&self, job_id: u64) -> Option<HarvestJob> {
        if let Some(j) = self.active.lock().get(&job_id) {
            return Some(j.clone());
        }
        self.index.finished_jobs().into_iter().find(|j| j.job_id == job_id)
    }

    /// Registers a queued job, refusing a second active job for the same
    /// provider.
    pub fn enqueue(&self, provider_id: &str, kind: JobKind) -> Result<HarvestJob, StartError> {
        let mut active = self.active.lock();
        if active.values().any(|j| j.provider_id == provider_id) {
            return Err(StartError::AlreadyRunning(provider_id.to_string()));
        }
        let id = self.next_job_id.fetch_add(1, Ordering::SeqCst);
        let job = HarvestJob::new(id, provider_id, kind, self.clock.now());
        active.insert(id, job.clone());
        Ok(job)
    }

    fn update(&self, job_id: u64, f: impl FnOnce(&mut HarvestJob)) {
        if let Some(j) = self.active.lock().get_mut(&job_id) {
            f(j);
        }
    }

    fn finish(&self, job_id: u64, result: Result<(), String>) -> HarvestJob {
        let mut job = self.active.lock().get(&job_id).cloned().expect("active job");
        match result {
            Ok(()) => job.transition(JobState::Succeeded),
            Err(e) => {
                job.error_log.push(e);
                job.transition(JobState::Failed);
            }
        }
        job.finished_at = Some(self.clock.now());
        if let Err(e) = self.index.record_job(job.clone()) {
            tracing::error!(job = job_id, error = %e, "could not persist job");
        }
        self.active.lock().remove(&job_id);
        tracing::info!(job = job_id, provider = %job.provider_id, state = ?job.state, counts = ?job.counts, "harvest job finished");
        job
    }

    pub async fn run_full(&self, provider: &ProviderDescriptor) -> Result<HarvestJob, StartError> {
        self.run(provider, JobKind::Full).await
    }

    /// Harvests changes since the checkpoint, or everything without one.
    pub async fn run_incremental(&self, provider: &ProviderDescriptor) -> Result<HarvestJob, StartError> {
        self.run(provider, JobKind::Incremental).await
    }

    pub async fn run(&self, provider: &ProviderDescriptor, kind: JobKind) -> Result<HarvestJob, StartError> {
        if !provider.has_mode(Mode::Harvest) {
            return Err(StartError::NotHarvestable(provider.provider_id.clone()));
        }
        let job = self.enqueue(&provider.provider_id, kind)?;
        Ok(self.execute(job.job_id, provider).await)
    }

    /// Runs a job created by [`Harvester::enqueue`].
    pub async fn execute(&self, job_id: u64, provider: &ProviderDescriptor) -> HarvestJob {
        let Some(kind) = self.active.lock().get(&job_id).map(|j| j.kind) else {
            panic!("job {job_id} is not queued");
        };
        self.update(job_id, |j| j.transition(JobState::Running));
        let from = match kind {
            JobKind::Incremental => self.index.checkpoint(&provider.provider_id).map(|c| c.plus_secs(-OVERLAP_SECS)),
            _ => None,
        };
        let result = self.harvest(job_id, provider, from).await;
        let result = match result {
            Ok(responded_at) => {
                self.index.set_checkpoint(&provider.provider_id, responded_at).map_err(|e| Failure::Index(e).to_string())
            }
            Err(e) => Err(e.to_string()),
        };
        self.finish(job_id, result)
    }

    async fn fetch(&self, base_url: &str, params: &[(&'static str, String)]) -> Result<HarvestResponse, Failure> {
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                tokio::time::sleep(self.retry.backoff(attempt - 1)).await;
            }
            match self.transport.fetch(base_url, params).await {
                Ok(bytes) => match parse_response(&bytes) {
                    Ok(resp) => return Ok(resp),
                    Err(e) => last = format!("unreadable response: {e}"),
                },
                Err(e) => last = format!("transport error: {e}"),
            }
            tracing::warn!(base_url, attempt = attempt + 1, error = %last, "harvest request failed");
        }
        Err(Failure::Fatal(format!("giving up after {} attempts: {last}", self.retry.attempts.max(1))))
    }

    /// Pages through ListRecords. Returns the first page's response time.
    async fn harvest(&self, job_id: u64, provider: &ProviderDescriptor, from: Option<Datestamp>) -> Result<Datestamp, Failure> {
        let mut params: Vec<(&'static str, String)> = vec![("verb", "ListRecords".into())];
        if let Some(f) = from {
            params.push(("from", f.to_string()));
        }
        let mut first_response: Option<Datestamp> = None;
        loop {
            let resp = self.fetch(&provider.base_url, &params).await?;
            first_response.get_or_insert(resp.responded_at);
            let (records, token) = match resp.body {
                ResponseBody::Records { records, token } => (records, token),
                ResponseBody::Error(e) if e.code == HarvestErrorCode::NoRecordsMatch => break,
                ResponseBody::Error(e) => return Err(Failure::Fatal(format!("provider error {}: {}", e.code, e.message))),
                other => return Err(Failure::Fatal(format!("unexpected response {other:?}"))),
            };
            let mut counts = JobCounts::default();
            for wire in records {
                counts.fetched += 1;
                match self.index.apply(&provider.provider_id, wire)? {
                    ApplyOutcome::Upserted => counts.upserted += 1,
                    ApplyOutcome::Deleted => counts.deleted += 1,
                    ApplyOutcome::Skipped => counts.skipped += 1,
                }
            }
            self.update(job_id, |j| add_counts(&mut j.counts, counts));
            match token {
                Some(t) => params = vec![("verb", "ListRecords".into()), ("resumptionToken", t.token.0)],
                None => break,
            }
        }
        Ok(first_response.expect("at least one response"))
    }

    /// Loads `.html`, `.htm` and `.txt` files from `dir` under a virtual
    /// provider. Records identical to the stored ones are not rewritten.
    pub fn ingest_files(&self, dir: &Path, virtual_provider_id: &str) -> Result<HarvestJob, StartError> {
        let job = self.enqueue(virtual_provider_id, JobKind::FileIngest)?;
        self.update(job.job_id, |j| j.transition(JobState::Running));
        let result = self.ingest(job.job_id, dir, virtual_provider_id);
        Ok(self.finish(job.job_id, result))
    }

    fn ingest(&self, job_id: u64, dir: &Path, provider_id: &str) -> Result<(), String> {
        let now = self.clock.now();
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut parsed_files = 0;
        let mut log = Vec::new();
        let mut counts = JobCounts::default();
        for path in files {
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            let is_html = matches!(ext.as_deref(), Some("html" | "htm"));
            if !is_html && ext.as_deref() != Some("txt") {
                continue;
            }
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) => {
                    log.push(format!("{name}: unreadable: {e}"));
                    continue;
                }
            };
            parsed_files += 1;
            let records = if is_html { vec![extract_dc_from_html(&bytes)] } else { parse_tagged_text(&bytes) };
            if records.is_empty() {
                log.push(format!("{name}: no Dublin Core statements, skipped"));
                counts.skipped += 1;
            }
            for (record, warnings) in records {
                log.extend(warnings.into_iter().map(|w| format!("{name}: {w}")));
                if record.is_empty() {
                    log.push(format!("{name}: no Dublin Core statements, skipped"));
                    counts.skipped += 1;
                    continue;
                }
                counts.fetched += 1;
                let identifier = ingest_identifier(&record);
                if self.index.lookup(provider_id, &identifier).and_then(|e| e.record).as_ref() == Some(&record) {
                    counts.skipped += 1;
                    continue;
                }
                let wire = WireRecord::live(RecordHeader::new(identifier, now), record);
                match self.index.apply(provider_id, wire) {
                    Ok(ApplyOutcome::Upserted) => counts.upserted += 1,
                    Ok(_) => counts.skipped += 1,
                    Err(e) => return Err(format!("index write failed: {e}")),
                }
            }
        }
        self.update(job_id, |j| {
            j.counts = counts;
            j.error_log = log;
        });
        if parsed_files == 0 {
            return Err(format!("no ingestible files in {}", dir.display()));
        }
        Ok(())
    }
}

fn add_counts(total: &mut JobCounts, c: JobCounts) {
    total.fetched += c.fetched;
    total.upserted += c.upserted;
    total.deleted += c.deleted;
    total.skipped += c.skipped;
}

/// The first identifier statement, or `hash:` and 16 hex digits of the
/// SHA-256 of the record's XML encoding.
pub fn ingest_identifier(record: &MetadataRecord) -> String {
    if let Some(id) = record.first(ElementName::Identifier) {
        return id.to_string();
    }
    let mut xml = String::new();
    write_dc(&mut xml, record);
    let digest = Sha256::digest(xml.as_bytes());
    format!("hash:{}", &hex::encode(digest)[..16])
}
