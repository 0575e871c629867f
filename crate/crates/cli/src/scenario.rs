//! Line-oriented simulation scenarios run against in-process providers and
//! a gateway on loopback ports.
//!
//! ```text
//! # comment
//! seed 42
//! start-provider rep1 page-size 100 modes harvest,search
//! submit rep1 1000
//! submit rep2 1000 stream rep1
//! update rep1 0.1
//! delete rep1 0.05
//! harvest rep1 full
//! inject-delay rep2 10000
//! restart rep1
//! search redes OR genoma
//! assert index-entries 3000
//! ```
//!
//! Every interaction goes through the HTTP endpoints, except delay injection
//! and restarts, which act on the provider processes the runner owns.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use bdl_core::clock::ManualClock;
use bdl_core::codec::WireRecord;
use bdl_core::corpus::{generate_record, KindMix};
use bdl_core::dc::DocumentKind;
use bdl_gateway::{Gateway, GatewayConfig, GatewayServer, Registry};
use bdl_provider::{ProviderServer, ProviderService, Repository, RepositoryConfig};
use bdl_union::{Harvester, HttpTransport, IndexOptions, JobKind, JobState, Mode, ProviderDescriptor, RetryPolicy, UnionIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::client::{GatewayClient, ProviderClient};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    IndexEntries { n: usize, provider: Option<String> },
    IndexLive { n: usize, provider: Option<String> },
    UnionMatches { provider: String },
    JobsSucceeded,
    Partial(bool),
    WallMsBelow(u64),
    ResultsMin(usize),
    SearchTotal(usize),
    SourcesMin(usize),
    UniqueFingerprints,
    Outcome { provider: String, status: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    StartProvider { id: String, page_size: Option<usize>, modes: Vec<Mode> },
    Submit { provider: String, n: usize, stream: Option<String> },
    Update { provider: String, fraction: f64 },
    Delete { provider: String, fraction: f64 },
    Harvest { provider: String, kind: JobKind },
    InjectDelay { provider: String, ms: u64 },
    Restart { provider: String },
    Search { query: String },
    Assert(Check),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStep {
    pub line: usize,
    pub text: String,
    pub step: Step,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub steps: Vec<ScenarioStep>,
}

fn num<T: std::str::FromStr>(s: Option<&&str>, what: &str) -> Result<T, String> {
    let s = s.ok_or_else(|| format!("missing {what}"))?;
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn fraction(s: Option<&&str>) -> Result<f64, String> {
    let f: f64 = num(s, "fraction")?;
    if !(0.0..=1.0).contains(&f) {
        return Err(format!("fraction {f} outside [0, 1]"));
    }
    Ok(f)
}

fn name(s: Option<&&str>, what: &str) -> Result<String, String> {
    s.map(|s| s.to_string()).ok_or_else(|| format!("missing {what}"))
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, String> {
    s.split(',')
        .map(|m| match m {
            "harvest" => Ok(Mode::Harvest),
            "search" => Ok(Mode::Search),
            _ => Err(format!("unknown mode `{m}`")),
        })
        .collect()
}

fn parse_check(words: &[&str]) -> Result<Check, String> {
    let args = &words[1..];
    let optional_provider = || args.get(1).map(|s| s.to_string());
    let check = match words.first().copied() {
        Some("index-entries") => Check::IndexEntries { n: num(args.first(), "count")?, provider: optional_provider() },
        Some("index-live") => Check::IndexLive { n: num(args.first(), "count")?, provider: optional_provider() },
        Some("union-matches") => Check::UnionMatches { provider: name(args.first(), "provider")? },
        Some("jobs-succeeded") => Check::JobsSucceeded,
        Some("partial") => Check::Partial(num(args.first(), "true or false")?),
        Some("wall-ms-below") => Check::WallMsBelow(num(args.first(), "milliseconds")?),
        Some("results-min") => Check::ResultsMin(num(args.first(), "count")?),
        Some("search-total") => Check::SearchTotal(num(args.first(), "count")?),
        Some("sources-min") => Check::SourcesMin(num(args.first(), "count")?),
        Some("unique-fingerprints") => Check::UniqueFingerprints,
        Some("outcome") => {
            let status = name(args.get(1), "status")?;
            if !["ok", "timeout", "error"].contains(&status.as_str()) {
                return Err(format!("unknown status `{status}`"));
            }
            Check::Outcome { provider: name(args.first(), "provider")?, status }
        }
        Some(other) => return Err(format!("unknown assertion `{other}`")),
        None => return Err("missing assertion name".into()),
    };
    Ok(check)
}

fn parse_step(words: &[&str], rest: &str) -> Result<Option<Step>, String> {
    let arg = |i: usize| words.get(i);
    let step = match words[0] {
        "start-provider" => {
            let id = name(arg(1), "provider id")?;
            if !bdl_core::dc::is_valid_token(&id) || id == "union" {
                return Err(format!("invalid provider id `{id}`"));
            }
            let mut page_size = None;
            let mut modes = vec![Mode::Harvest, Mode::Search];
            let mut i = 2;
            while i < words.len() {
                match words[i] {
                    "page-size" => page_size = Some(num(arg(i + 1), "page size")?),
                    "modes" => modes = parse_modes(&name(arg(i + 1), "modes")?)?,
                    other => return Err(format!("unknown option `{other}`")),
                }
                i += 2;
            }
            Step::StartProvider { id, page_size, modes }
        }
        "submit" => {
            let stream = match (arg(3), arg(4)) {
                (None, _) => None,
                (Some(&"stream"), Some(s)) => Some(s.to_string()),
                _ => return Err("expected `stream <name>`".into()),
            };
            Step::Submit { provider: name(arg(1), "provider")?, n: num(arg(2), "count")?, stream }
        }
        "update" => Step::Update { provider: name(arg(1), "provider")?, fraction: fraction(arg(2))? },
        "delete" => Step::Delete { provider: name(arg(1), "provider")?, fraction: fraction(arg(2))? },
        "harvest" => {
            let kind = match arg(2).copied() {
                Some("full") => JobKind::Full,
                Some("incremental") => JobKind::Incremental,
                _ => return Err("expected `full` or `incremental`".into()),
            };
            Step::Harvest { provider: name(arg(1), "provider")?, kind }
        }
        "inject-delay" => Step::InjectDelay { provider: name(arg(1), "provider")?, ms: num(arg(2), "milliseconds")? },
        "restart" => Step::Restart { provider: name(arg(1), "provider")? },
        "search" => {
            if rest.is_empty() {
                return Err("missing query".into());
            }
            Step::Search { query: rest.to_string() }
        }
        "assert" => Step::Assert(parse_check(&words[1..])?),
        other => return Err(format!("unknown step `{other}`")),
    };
    Ok(Some(step))
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        let rest = trimmed[words[0].len()..].trim();
        let err = |message: String| ScenarioError { line, message };
        if words[0] == "seed" {
            scenario.seed = Some(num(words.get(1), "seed").map_err(err)?);
            continue;
        }
        if let Some(step) = parse_step(&words, rest).map_err(err)? {
            scenario.steps.push(ScenarioStep { line, text: trimmed.to_string(), step });
        }
    }
    Ok(scenario)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepReport {
    pub line: usize,
    pub step: String,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AssertionReport {
    pub line: usize,
    pub assertion: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub seed: u64,
    pub passed: bool,
    pub steps: Vec<StepReport>,
    pub assertions: Vec<AssertionReport>,
}

/// Derives an independent generator seed for a named stream.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_be_bytes()).chain_update(stream.as_bytes()).finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

struct Item {
    identifier: String,
    kind: DocumentKind,
    live: bool,
}

struct SimProvider {
    _dir: TempDir,
    config: RepositoryConfig,
    server: Option<ProviderServer>,
    client: ProviderClient,
    items: Vec<Item>,
    cursors: BTreeMap<String, u64>,
    mutations: u64,
}

impl SimProvider {
    fn server(&self) -> &ProviderServer {
        self.server.as_ref().expect("provider is running")
    }

    fn live(&self) -> Vec<usize> {
        self.items.iter().enumerate().filter(|(_, it)| it.live).map(|(i, _)| i).collect()
    }
}

struct LastSearch {
    body: Value,
    wall: Duration,
}

struct Runner {
    seed: u64,
    clock: Arc<ManualClock>,
    _union_dir: TempDir,
    gateway: GatewayServer,
    gw: GatewayClient,
    providers: BTreeMap<String, SimProvider>,
    last_search: Option<LastSearch>,
}

const CLOCK_START: &str = "2002-01-01T00:00:00Z";
const JOB_POLL: Duration = Duration::from_millis(10);

async fn bind_provider(config: &RepositoryConfig, clock: &Arc<ManualClock>, addr: &str) -> Result<ProviderServer> {
    let repo = Repository::open(config.clone()).context("opening provider store")?;
    Ok(ProviderServer::bind(ProviderService::new(repo, clock.clone()), addr).await?)
}

impl Runner {
    async fn new(seed: u64) -> Result<Runner> {
        let clock = Arc::new(ManualClock::new(CLOCK_START.parse().expect("valid datestamp")));
        let union_dir = tempfile::tempdir()?;
        let index = UnionIndex::open(union_dir.path(), IndexOptions::default())?;
        let harvester = Harvester::new(
            Arc::new(index),
            Arc::new(HttpTransport::default()),
            clock.clone(),
            RetryPolicy::default(),
        );
        let gateway = Gateway::new(Registry::in_memory(), Arc::new(harvester), GatewayConfig::default());
        let gateway = GatewayServer::bind(gateway, "127.0.0.1:0").await?;
        let gw = GatewayClient::new(gateway.base_url());
        Ok(Runner { seed, clock, _union_dir: union_dir, gateway, gw, providers: BTreeMap::new(), last_search: None })
    }

    fn provider(&mut self, id: &str) -> Result<&mut SimProvider> {
        self.providers.get_mut(id).ok_or_else(|| anyhow!("no provider `{id}` has been started"))
    }

    fn last_search(&self) -> Result<&LastSearch> {
        self.last_search.as_ref().ok_or_else(|| anyhow!("no search has run yet"))
    }

    async fn step(&mut self, step: &Step) -> Result<Value> {
        match step {
            Step::StartProvider { id, page_size, modes } => {
                if self.providers.contains_key(id) {
                    bail!("provider `{id}` already started");
                }
                let dir = tempfile::tempdir()?;
                let mut config = RepositoryConfig::new(id, dir.path());
                if let Some(p) = page_size {
                    config.page_size = *p;
                }
                config.sync_writes = false;
                config.check()?;
                let server = bind_provider(&config, &self.clock, "127.0.0.1:0").await?;
                let client = ProviderClient::new(server.base_url());
                self.gw.add_provider(&ProviderDescriptor::new(id, server.base_url(), modes)).await?;
                self.providers.insert(
                    id.clone(),
                    SimProvider {
                        _dir: dir,
                        config,
                        server: Some(server),
                        client,
                        items: Vec::new(),
                        cursors: BTreeMap::new(),
                        mutations: 0,
                    },
                );
                Ok(json!({ "modes": modes }))
            }
            Step::Submit { provider, n, stream } => {
                let seed = self.seed;
                let clock = self.clock.clone();
                let p = self.provider(provider)?;
                let stream = stream.clone().unwrap_or_else(|| provider.clone());
                let stream_seed = stream_seed(seed, &stream);
                let cursor = p.cursors.entry(stream.clone()).or_insert(0);
                let first = *cursor;
                for i in first..first + *n as u64 {
                    let g = generate_record(stream_seed, i, KindMix::default());
                    clock.advance(1);
                    let ack = p.client.submit(g.kind, g.record).await?;
                    p.items.push(Item { identifier: ack.identifier, kind: g.kind, live: true });
                }
                *cursor += *n as u64;
                Ok(json!({ "submitted": n, "stream": stream, "firstIndex": first }))
            }
            Step::Update { provider, fraction } | Step::Delete { provider, fraction } => {
                let is_update = matches!(step, Step::Update { .. });
                let seed = self.seed;
                let clock = self.clock.clone();
                let line_seed = stream_seed(seed, &format!("{}:{provider}", if is_update { "update" } else { "delete" }));
                let p = self.provider(provider)?;
                let live = p.live();
                let count = ((live.len() as f64) * fraction).round() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(line_seed ^ p.mutations);
                let mut chosen: Vec<usize> = sample(&mut rng, live.len(), count).into_iter().map(|k| live[k]).collect();
                chosen.sort_unstable();
                for &idx in &chosen {
                    clock.advance(1);
                    let identifier = p.items[idx].identifier.clone();
                    if is_update {
                        let g = generate_record(line_seed, p.mutations, KindMix::only(p.items[idx].kind));
                        p.client.update(&identifier, g.record).await?;
                    } else {
                        p.client.delete(&identifier).await?;
                        p.items[idx].live = false;
                    }
                    p.mutations += 1;
                }
                let key = if is_update { "updated" } else { "deleted" };
                Ok(json!({ key: chosen.len() }))
            }
            Step::Harvest { provider, kind } => {
                self.clock.advance(1);
                let job = self.gw.run_harvest(provider, *kind).await?;
                let job = self.gw.wait_job(job.job_id, JOB_POLL).await?;
                let mut detail = json!({ "jobId": job.job_id, "state": job.state, "counts": job.counts });
                if job.state == JobState::Failed {
                    detail["errors"] = json!(job.error_log);
                }
                Ok(detail)
            }
            Step::InjectDelay { provider, ms } => {
                self.provider(provider)?.server().service().set_search_delay(Duration::from_millis(*ms));
                Ok(json!({ "delayMs": ms }))
            }
            Step::Restart { provider } => {
                let clock = self.clock.clone();
                let p = self.provider(provider)?;
                let server = p.server.take().expect("provider is running");
                let addr = server.addr().to_string();
                server.shutdown().await;
                let server = bind_provider(&p.config, &clock, &addr).await?;
                p.server = Some(server);
                Ok(json!({ "restarted": provider }))
            }
            Step::Search { query } => {
                let started = Instant::now();
                let body = self.gw.search(query, 0, 10_000).await?;
                let wall = started.elapsed();
                let outcomes: Vec<Value> = body["outcomes"]
                    .as_array()
                    .map(|os| os.iter().map(|o| json!({ "provider": o["provider"], "status": o["status"] })).collect())
                    .unwrap_or_default();
                let top: Vec<Value> = results(&body).iter().take(5).map(|r| r["fingerprint"].clone()).collect();
                let detail = json!({
                    "total": body["total"],
                    "top": top,
                    "partial": body["partial"],
                    "outcomes": outcomes,
                    "elapsedMs": wall.as_millis() as u64,
                });
                self.last_search = Some(LastSearch { body, wall });
                Ok(detail)
            }
            Step::Assert(_) => unreachable!("assertions are evaluated separately"),
        }
    }

    async fn check(&mut self, check: &Check) -> Result<(bool, String, Option<u64>)> {
        let stats = |v: &Value, key: &str| v[key].as_u64().unwrap_or(0) as usize;
        Ok(match check {
            Check::IndexEntries { n, provider } | Check::IndexLive { n, provider } => {
                let key = if matches!(check, Check::IndexEntries { .. }) { "entries" } else { "live" };
                let got = stats(&self.gw.index_stats(provider.as_deref()).await?, key);
                (got == *n, format!("{got} {key}"), None)
            }
            Check::UnionMatches { provider } => {
                let originals = self.provider(provider)?.client.list_records().await?;
                let expected: Vec<Value> = originals.iter().map(entry_view).collect();
                let mut got = self.gw.index_entries(provider).await?;
                for e in &mut got {
                    if let Some(o) = e.as_object_mut() {
                        o.remove("providerId");
                    }
                }
                let mut expected = expected;
                let key = |v: &Value| v["identifier"].as_str().unwrap_or_default().to_string();
                expected.sort_by_key(key);
                got.sort_by_key(key);
                let differing = if got.len() == expected.len() {
                    got.iter().zip(&expected).filter(|(a, b)| a != b).count()
                } else {
                    got.len().max(expected.len())
                };
                (differing == 0, format!("{} entries, {} at the provider, {differing} differ", got.len(), expected.len()), None)
            }
            Check::JobsSucceeded => {
                let jobs = self.gw.jobs().await?;
                let failed = jobs.iter().filter(|j| j.state != JobState::Succeeded).count();
                (failed == 0, format!("{} jobs, {failed} not succeeded", jobs.len()), None)
            }
            Check::Partial(expected) => {
                let got = self.last_search()?.body["partial"].as_bool().unwrap_or(false);
                (got == *expected, format!("partial = {got}"), None)
            }
            Check::WallMsBelow(limit) => {
                let wall = self.last_search()?.wall.as_millis() as u64;
                (wall < *limit, format!("limit {limit} ms"), Some(wall))
            }
            Check::ResultsMin(n) | Check::SearchTotal(n) => {
                let got = self.last_search()?.body["total"].as_u64().unwrap_or(0) as usize;
                let ok = if matches!(check, Check::ResultsMin(_)) { got >= *n } else { got == *n };
                (ok, format!("{got} results"), None)
            }
            Check::SourcesMin(n) => {
                let results = results(&self.last_search()?.body);
                let fewest = results.iter().map(|r| r["sources"].as_array().map_or(0, Vec::len)).min().unwrap_or(0);
                (results.is_empty() || fewest >= *n, format!("fewest sources per result: {fewest}"), None)
            }
            Check::UniqueFingerprints => {
                let results = results(&self.last_search()?.body);
                let distinct: BTreeSet<&str> = results.iter().filter_map(|r| r["fingerprint"].as_str()).collect();
                (distinct.len() == results.len(), format!("{} results, {} fingerprints", results.len(), distinct.len()), None)
            }
            Check::Outcome { provider, status } => {
                let body = &self.last_search()?.body;
                let got = body["outcomes"]
                    .as_array()
                    .and_then(|os| os.iter().find(|o| o["provider"] == provider.as_str()))
                    .and_then(|o| o["status"].as_str())
                    .unwrap_or("absent")
                    .to_string();
                (got == *status, format!("{provider}: {got}"), None)
            }
        })
    }
}

fn results(body: &Value) -> Vec<Value> {
    body["results"].as_array().cloned().unwrap_or_default()
}

/// A provider record in the shape of the gateway's index entry listing.
pub fn entry_view(w: &WireRecord) -> Value {
    let mut v = json!({
        "identifier": w.header.identifier,
        "datestamp": w.header.datestamp,
        "deleted": w.header.deleted,
    });
    if let Some(r) = &w.record {
        v["record"] = json!(r);
    }
    v
}

/// Runs every step in order. Failed assertions are reported; a step that
/// cannot run aborts the scenario with an error naming its line.
pub async fn run_scenario(scenario: &Scenario, seed: u64) -> Result<Report> {
    let mut runner = Runner::new(seed).await?;
    let mut report = Report { seed, passed: true, steps: Vec::new(), assertions: Vec::new() };
    for s in &scenario.steps {
        match &s.step {
            Step::Assert(check) => {
                let (passed, detail, elapsed_ms) =
                    runner.check(check).await.with_context(|| format!("line {}: {}", s.line, s.text))?;
                report.passed &= passed;
                report.assertions.push(AssertionReport {
                    line: s.line,
                    assertion: s.text["assert".len()..].trim().to_string(),
                    passed,
                    detail,
                    elapsed_ms,
                });
            }
            step => {
                let detail = runner.step(step).await.with_context(|| format!("line {}: {}", s.line, s.text))?;
                report.steps.push(StepReport { line: s.line, step: s.text.clone(), detail });
            }
        }
    }
    runner.gateway.shutdown().await;
    for (_, p) in std::mem::take(&mut runner.providers) {
        if let Some(server) = p.server {
            server.shutdown().await;
        }
    }
    Ok(report)
}

/// Removes wall-clock fields so reports of the same run can be compared.
pub fn without_timings(report: &Report) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("elapsedMs");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(report).expect("report serializes");
    strip(&mut v);
    v
}
