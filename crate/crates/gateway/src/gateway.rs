use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bdl_core::api::SearchRequest;
use bdl_core::query::{canonical_text, parse_query, SyntaxError};
use bdl_union::{HarvestJob, Harvester, JobKind, Mode, StartError, UnionIndex};
use serde::Serialize;
use tokio::task::JoinHandle;

use crate::broadcast::{broadcast, Deadlines, HttpTarget, OutcomeStatus, ProviderOutcome, SearchTarget, UnionTarget};
use crate::merge::{merge, MergedResult};
use crate::registry::Registry;

/// Hits requested from each target before merging. Fixed so that every
/// window of a query is cut from the same merged list.
pub const DEFAULT_FETCH_DEPTH: usize = 1000;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub deadlines: Deadlines,
    pub fetch_depth: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { deadlines: Deadlines::default(), fetch_depth: DEFAULT_FETCH_DEPTH }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnifiedResponse {
    /// Merged results before windowing.
    pub total: usize,
    pub start: usize,
    pub results: Vec<MergedResult>,
    pub partial: bool,
    pub outcomes: Vec<ProviderOutcome>,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("max must be at least 1")]
    EmptyWindow,
}

#[derive(Debug, thiserror::Error)]
pub enum HarvestRequestError {
    #[error("no provider `{0}`")]
    UnknownProvider(String),
    #[error(transparent)]
    Start(#[from] StartError),
}

pub struct Gateway {
    registry: Registry,
    index: Arc<UnionIndex>,
    harvester: Arc<Harvester>,
    client: reqwest::Client,
    config: GatewayConfig,
}

impl Gateway {
    pub fn new(registry: Registry, harvester: Arc<Harvester>, config: GatewayConfig) -> Arc<Self> {
        let client = reqwest::Client::builder()
            .pool_idle_timeout(Duration::from_secs(30))
            .build()
            .expect("HTTP client configuration");
        Arc::new(Gateway { registry, index: harvester.index().clone(), harvester, client, config })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn index(&self) -> &Arc<UnionIndex> {
        &self.index
    }

    pub fn harvester(&self) -> &Arc<Harvester> {
        &self.harvester
    }

    /// The union index followed by every registered search provider.
    pub fn targets(&self) -> Vec<Arc<dyn SearchTarget>> {
        let mut targets: Vec<Arc<dyn SearchTarget>> = vec![Arc::new(UnionTarget(self.index.clone()))];
        for d in self.registry.list().iter().filter(|d| d.has_mode(Mode::Search)) {
            targets.push(Arc::new(HttpTarget::new(&d.provider_id, &d.base_url, self.client.clone())));
        }
        targets
    }

    /// Parses once, broadcasts, merges and windows.
    pub async fn unified_search(&self, query_text: &str, start: usize, max: usize) -> Result<UnifiedResponse, SearchError> {
        let query = parse_query(query_text)?;
        if max == 0 {
            return Err(SearchError::EmptyWindow);
        }
        let request = SearchRequest { query: canonical_text(&query), start: 0, max: self.config.fetch_depth };
        let outcomes = broadcast(&self.targets(), &request, self.config.deadlines).await;
        let merged = merge(&outcomes);
        let total = merged.len();
        let results = merged.into_iter().skip(start).take(max).collect();
        let partial = outcomes.iter().any(|o| o.status != OutcomeStatus::Ok);
        Ok(UnifiedResponse { total, start, results, partial, outcomes })
    }

    /// Queues a harvest and runs it in the background.
    pub fn start_harvest(&self, provider_id: &str, kind: JobKind) -> Result<HarvestJob, HarvestRequestError> {
        let descriptor =
            self.registry.get(provider_id).ok_or_else(|| HarvestRequestError::UnknownProvider(provider_id.to_string()))?;
        if !descriptor.has_mode(Mode::Harvest) {
            return Err(StartError::NotHarvestable(provider_id.to_string()).into());
        }
        let job = self.harvester.enqueue(provider_id, kind)?;
        let harvester = self.harvester.clone();
        let id = job.job_id;
        tokio::spawn(async move {
            harvester.execute(id, &descriptor).await;
        });
        Ok(job)
    }

    /// Starts an incremental harvest for each provider whose poll interval
    /// has elapsed, checking every `tick`.
    pub fn spawn_scheduler(self: &Arc<Self>, tick: Duration) -> JoinHandle<()> {
        let gw = self.clone();
        tokio::spawn(async move {
            let mut last: HashMap<String, Instant> = HashMap::new();
            let mut interval = tokio::time::interval(tick);
            loop {
                interval.tick().await;
                for d in gw.registry.list().iter().filter(|d| d.has_mode(Mode::Harvest)) {
                    let due = last.get(&d.provider_id).is_none_or(|t| t.elapsed() >= Duration::from_secs(d.poll_interval));
                    if !due {
                        continue;
                    }
                    match gw.start_harvest(&d.provider_id, JobKind::Incremental) {
                        Ok(job) => {
                            tracing::info!(provider = %d.provider_id, job = job.job_id, "scheduled harvest started");
                            last.insert(d.provider_id.clone(), Instant::now());
                        }
                        Err(e) => tracing::debug!(provider = %d.provider_id, error = %e, "scheduled harvest not started"),
                    }
                }
            }
        })
    }
}
