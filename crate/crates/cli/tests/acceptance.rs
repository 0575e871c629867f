//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::io::Write;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use bdl_cli::client::{GatewayClient, ProviderClient};
use bdl_cli::scenario::entry_view;
use bdl_core::api::{SearchHit, SearchRequest};
use bdl_core::clock::ManualClock;
use bdl_core::codec::{decode_record_xml, encode_record_xml, extract_dc_from_html, parse_tagged_text, WireRecord};
use bdl_core::corpus::{generate_corpus, generate_record, random_query, KindMix};
use bdl_core::dc::{fingerprint, ElementName, MetadataRecord, Statement};
use bdl_core::harvest::{parse_response, render_response, Datestamp, HarvestResponse, RecordHeader, ResponseBody};
use bdl_core::query::{eval_query, parse_query};
use bdl_gateway::{merge, Gateway, GatewayConfig, OutcomeStatus, ProviderOutcome, Registry};
use bdl_provider::{ProviderServer, ProviderService, Repository, RepositoryConfig};
use bdl_union::{Harvester, HttpTransport, IndexOptions, JobState, Mode, ProviderDescriptor, RetryPolicy, UnionIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

// ---------------------------------------------------------------- fixtures

fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new("2002-01-01T00:00:00Z".parse().unwrap()))
}

fn open_repo(dir: &Path, id: &str, page_size: usize) -> Result<Repository> {
    let mut config = RepositoryConfig::new(id, dir);
    config.page_size = page_size;
    config.sync_writes = false;
    Ok(Repository::open(config)?)
}

async fn serve(repo: Repository, clock: &Arc<ManualClock>) -> Result<ProviderServer> {
    Ok(ProviderServer::bind(ProviderService::new(repo, clock.clone()), "127.0.0.1:0").await?)
}

fn open_index(dir: &Path) -> Result<Arc<UnionIndex>> {
    Ok(Arc::new(UnionIndex::open(dir, IndexOptions { snapshot_every: 500, sync_writes: false })?))
}

fn harvester(index: Arc<UnionIndex>, clock: &Arc<ManualClock>) -> Harvester {
    Harvester::new(index, Arc::new(HttpTransport::default()), clock.clone(), RetryPolicy::no_wait(2))
}

fn descriptor(server: &ProviderServer, modes: &[Mode]) -> ProviderDescriptor {
    ProviderDescriptor::new(server.service().repository().repository_id(), server.base_url(), modes)
}

/// One `ListRecords` page: records plus the token for the next page.
async fn list_page(http: &reqwest::Client, base: &str, token: Option<&str>) -> Result<(Vec<WireRecord>, Option<String>)> {
    let mut params = vec![("verb", "ListRecords".to_string())];
    if let Some(t) = token {
        params.push(("resumptionToken", t.to_string()));
    }
    let bytes = http.get(format!("{base}/oai")).query(&params).send().await?.bytes().await?;
    match parse_response(&bytes).map_err(|e| anyhow!("{e}"))?.body {
        ResponseBody::Records { records, token } => {
            Ok((records, token.map(|t| t.token.0).filter(|t| !t.is_empty())))
        }
        other => bail!("unexpected response {other:?}"),
    }
}

async fn list_all(base: &str, mut token: Option<String>) -> Result<(Vec<WireRecord>, usize)> {
    let http = reqwest::Client::new();
    let mut out = Vec::new();
    let mut pages = 0;
    loop {
        let (records, next) = list_page(&http, base, token.as_deref()).await?;
        out.extend(records);
        pages += 1;
        match next {
            Some(t) => token = Some(t),
            None => return Ok((out, pages)),
        }
    }
}

// ---------------------------------------------------------------- criteria

async fn harvest_completeness() -> Result<String> {
    let started = Instant::now();
    let clock = clock();
    let mut expected: BTreeMap<(String, String), Option<MetadataRecord>> = BTreeMap::new();
    let mut servers = Vec::new();
    let mut dirs = Vec::new();
    for (k, deletions) in [17usize, 17, 16].into_iter().enumerate() {
        let id = format!("rep{}", k + 1);
        let dir = tempfile::tempdir()?;
        let repo = open_repo(dir.path(), &id, 100)?;
        let mut ids = Vec::new();
        for g in generate_corpus(100 + k as u64, 1000, KindMix::default()) {
            let identifier = repo.submit(g.record.clone(), g.kind, None, clock.advance(1))?;
            expected.insert((id.clone(), identifier.clone()), Some(g.record));
            ids.push(identifier);
        }
        for j in 0..deletions {
            let victim = &ids[j * 59 % 1000];
            repo.delete(victim, clock.advance(1))?;
            expected.insert((id.clone(), victim.clone()), None);
        }
        servers.push(serve(repo, &clock).await?);
        dirs.push(dir);
    }
    let idx_dir = tempfile::tempdir()?;
    let h = harvester(open_index(idx_dir.path())?, &clock);
    for s in &servers {
        let job = h.run_full(&descriptor(s, &[Mode::Harvest])).await?;
        ensure!(job.state == JobState::Succeeded, "harvest failed: {:?}", job.error_log);
    }
    let entries = h.index().entries();
    let live = entries.iter().filter(|e| e.is_live()).count();
    ensure!(entries.len() == 3000, "{} entries", entries.len());
    ensure!(live == 2950, "{live} live");
    for e in &entries {
        let want = expected
            .get(&(e.provider_id.clone(), e.header.identifier.clone()))
            .ok_or_else(|| anyhow!("unexpected entry {}", e.header.identifier))?;
        ensure!(&e.record == want, "{} differs from the provider original", e.header.identifier);
        ensure!(e.header.deleted == want.is_none(), "{} tombstone flag", e.header.identifier);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("3000 entries, 2950 live, all equal to the originals, {:.1} s", elapsed.as_secs_f64()))
}

async fn paging_equivalence() -> Result<String> {
    let clock = clock();
    let dir = tempfile::tempdir()?;
    {
        let repo = open_repo(dir.path(), "rep1", 100)?;
        let mut ids = Vec::new();
        for g in generate_corpus(200, 500, KindMix::default()) {
            ids.push(repo.submit(g.record, g.kind, None, clock.advance(1))?);
        }
        for id in ids.iter().step_by(25) {
            repo.delete(id, clock.advance(1))?;
        }
    }
    let mut sequences = Vec::new();
    for page_size in [1, 7, 100] {
        let server = serve(open_repo(dir.path(), "rep1", page_size)?, &clock).await?;
        let (records, pages) = list_all(&server.base_url(), None).await?;
        ensure!(pages == 500usize.div_ceil(page_size), "page size {page_size}: {pages} pages");
        sequences.push(records);
        server.shutdown().await;
    }
    ensure!(sequences[0].len() == 500, "{} records", sequences[0].len());
    ensure!(sequences[0] == sequences[1] && sequences[1] == sequences[2], "sequences differ across page sizes");

    // a token minted before a restart resumes afterwards
    let server = serve(open_repo(dir.path(), "rep1", 7)?, &clock).await?;
    let http = reqwest::Client::new();
    let mut head = Vec::new();
    let mut token = None;
    for _ in 0..3 {
        let (records, next) = list_page(&http, &server.base_url(), token.as_deref()).await?;
        head.extend(records);
        token = next;
    }
    server.shutdown().await;
    clock.advance(30);
    let server = serve(open_repo(dir.path(), "rep1", 7)?, &clock).await?;
    let (tail, _) = list_all(&server.base_url(), token).await?;
    head.extend(tail);
    ensure!(head == sequences[0], "resumed sequence differs");
    Ok("page sizes 1, 7, 100 give identical 500-record sequences; token resumes across restart".into())
}

async fn incremental_convergence() -> Result<String> {
    let clock = clock();
    let pdir = tempfile::tempdir()?;
    let repo = open_repo(pdir.path(), "rep1", 50)?;
    let corpus = generate_corpus(300, 1000, KindMix::default());
    let mut ids = Vec::new();
    for g in &corpus {
        ids.push(repo.submit(g.record.clone(), g.kind, None, clock.advance(1))?);
    }
    let server = serve(repo, &clock).await?;
    let d = descriptor(&server, &[Mode::Harvest]);
    let adir = tempfile::tempdir()?;
    let h = harvester(open_index(adir.path())?, &clock);
    clock.advance(1);
    ensure!(h.run_full(&d).await?.state == JobState::Succeeded, "initial full harvest failed");

    // 10 %: 33 updates, 33 deletions, 34 additions
    let repo = server.service().repository();
    for j in 0..66usize {
        let i = j * 37 % 1000;
        if j < 33 {
            let g = generate_record(301, j as u64, KindMix::only(corpus[i].kind));
            repo.update(&ids[i], g.record, clock.advance(1))?;
        } else {
            repo.delete(&ids[i], clock.advance(1))?;
        }
    }
    for g in generate_corpus(302, 34, KindMix::default()) {
        repo.submit(g.record, g.kind, None, clock.advance(1))?;
    }
    clock.advance(1);
    let job = h.run_incremental(&d).await?;
    ensure!(job.state == JobState::Succeeded, "incremental failed: {:?}", job.error_log);

    let bdir = tempfile::tempdir()?;
    let oracle = harvester(open_index(bdir.path())?, &clock);
    ensure!(oracle.run_full(&d).await?.state == JobState::Succeeded, "oracle harvest failed");
    let (a, b) = (h.index().entries(), oracle.index().entries());
    ensure!(a.len() == 1034, "{} entries", a.len());
    ensure!(a == b, "incremental index differs from the full re-harvest");
    let c = job.counts;
    ensure!((c.upserted, c.deleted) == (67, 33), "counts {c:?}");
    Ok(format!("1034 entries equal the full re-harvest; incremental upserted {} deleted {}", c.upserted, c.deleted))
}

async fn query_oracle() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let index = open_index(dir.path())?;
    let mut live: Vec<(String, String, MetadataRecord)> = Vec::new();
    for (i, g) in generate_corpus(400, 500, KindMix::default()).into_iter().enumerate() {
        let provider = format!("p{}", i % 3);
        let header = RecordHeader::new(format!("oai:{provider}:{i}"), Datestamp::from_unix(1_000_000 + i as i64));
        if i % 9 == 4 {
            index.apply(&provider, WireRecord::deleted(header))?;
        } else {
            live.push((provider.clone(), header.identifier.clone(), g.record.clone()));
            index.apply(&provider, WireRecord::live(header, g.record))?;
        }
    }
    ensure!(index.len() == 500, "{} entries", index.len());
    let mut nonempty = 0;
    for i in 0..200 {
        let text = random_query(401, i);
        let q = parse_query(&text)?;
        let expected: BTreeSet<(String, String)> =
            live.iter().filter(|(_, _, r)| eval_query(&q, r)).map(|(p, id, _)| (p.clone(), id.clone())).collect();
        let req = SearchRequest { query: text.clone(), start: 0, max: 10_000 };
        let first = bdl_union::http::search(&index, &req).map_err(|e| anyhow!(e.error))?;
        let got: BTreeSet<(String, String)> = index
            .query(&text, 0, 10_000)?
            .1
            .into_iter()
            .map(|h| (h.provider_id, h.identifier))
            .collect();
        ensure!(got == expected, "query {text:?}: {} hits, oracle {}", got.len(), expected.len());
        ensure!(first.total == expected.len(), "query {text:?}: total {}", first.total);
        let again = bdl_union::http::search(&index, &req).map_err(|e| anyhow!(e.error))?;
        ensure!(serde_json::to_vec(&first)? == serde_json::to_vec(&again)?, "query {text:?} not repeatable");
        nonempty += usize::from(!expected.is_empty());
    }
    ensure!(nonempty >= 50, "only {nonempty} queries matched anything");
    Ok(format!("200 queries over 500 entries match the brute-force scan ({nonempty} non-empty); repeats byte-identical"))
}

fn hit(id: &str, title: &str) -> SearchHit {
    SearchHit {
        identifier: id.into(),
        datestamp: Datestamp::from_unix(0),
        metadata: MetadataRecord::new(vec![Statement::new(ElementName::Title, title)]),
        score: None,
    }
}

/// Scores written out by hand from 1/(rank+1).
fn rank_fusion_fixtures() -> Result<()> {
    // "Alpha" at rank 0 in a and rank 1 in b: 1 + 1/2
    let m = merge(&[
        ProviderOutcome::ok("a", vec![hit("a:1", "Alpha"), hit("a:2", "Beta")]),
        ProviderOutcome::ok("b", vec![hit("b:1", "Gamma"), hit("b:2", "alpha")]),
    ]);
    let got: Vec<(String, String)> = m.iter().map(|r| (r.fingerprint.0.clone(), r.score.to_string())).collect();
    let want = [("alpha||----", "3/2"), ("gamma||----", "1"), ("beta||----", "1/2")];
    ensure!(got.iter().map(|(f, s)| (f.as_str(), s.as_str())).eq(want), "fixture 1: {got:?}");

    // ranks 2, 2 and 3: 1/3 + 1/3 + 1/4 = 11/12, ahead of a lone rank 1 (1/2)
    let filler = |p: &str, n: usize| (0..n).map(|i| hit(&format!("{p}:f{i}"), &format!("Filler {p} {i}"))).collect::<Vec<_>>();
    let with = |p: &str, mut v: Vec<SearchHit>, at: usize, title: &str| {
        v.insert(at, hit(&format!("{p}:x"), title));
        v
    };
    let m = merge(&[
        ProviderOutcome::ok("a", with("a", filler("a", 2), 2, "Delta")),
        ProviderOutcome::ok("b", with("b", filler("b", 2), 2, "Delta")),
        ProviderOutcome::ok("c", with("c", filler("c", 3), 3, "Delta")),
    ]);
    let delta = m.iter().find(|r| r.fingerprint.0 == "delta||----").ok_or_else(|| anyhow!("no delta"))?;
    ensure!(delta.score.to_string() == "11/12" && delta.sources.len() == 3, "fixture 2: {}", delta.score);
    let pos = m.iter().position(|r| r.fingerprint.0 == "delta||----").unwrap();
    ensure!(pos == 3, "fixture 2: delta at {pos}");

    // ranks 0 and 2 give 4/3; rank 0 alone ties with ranks 1 and 1 at 1, broken by fingerprint
    let m = merge(&[
        ProviderOutcome::ok("a", vec![hit("a:1", "Zeta"), hit("a:2", "Eta")]),
        ProviderOutcome::ok("b", vec![hit("b:1", "Theta"), hit("b:2", "Eta"), hit("b:3", "Zeta")]),
    ]);
    let got: Vec<(String, String)> = m.iter().map(|r| (r.fingerprint.0.clone(), r.score.to_string())).collect();
    let want = [("zeta||----", "4/3"), ("eta||----", "1"), ("theta||----", "1")];
    ensure!(got.iter().map(|(f, s)| (f.as_str(), s.as_str())).eq(want), "fixture 3: {got:?}");
    Ok(())
}

async fn federation_equivalence() -> Result<String> {
    rank_fusion_fixtures()?;
    let clock = clock();
    let corpus = generate_corpus(500, 120, KindMix::default());
    let mut servers = Vec::new();
    let mut dirs = Vec::new();
    for id in ["rep1", "rep2"] {
        let dir = tempfile::tempdir()?;
        let repo = open_repo(dir.path(), id, 100)?;
        for g in &corpus {
            repo.submit(g.record.clone(), g.kind, None, clock.advance(1))?;
        }
        servers.push(serve(repo, &clock).await?);
        dirs.push(dir);
    }
    let idx = tempfile::tempdir()?;
    let h = harvester(open_index(idx.path())?, &clock);
    let registry = Registry::in_memory();
    for s in &servers {
        let d = descriptor(s, &[Mode::Harvest, Mode::Search]);
        ensure!(h.run_full(&d).await?.state == JobState::Succeeded, "harvest failed");
        registry.add(d)?;
    }
    let gw = Gateway::new(registry, Arc::new(h), GatewayConfig::default());
    let mut checked = 0;
    let mut queries: Vec<String> = (0..30).map(|i| random_query(501, i)).collect();
    queries.push("redes OR ciência OR genoma OR dados".into());
    for text in &queries {
        let q = parse_query(text)?;
        let expected: BTreeSet<_> = corpus.iter().filter(|g| eval_query(&q, &g.record)).map(|g| fingerprint(&g.record)).collect();
        let resp = gw.unified_search(text, 0, 10_000).await?;
        ensure!(!resp.partial, "{text}: partial");
        let got: Vec<_> = resp.results.iter().map(|r| r.fingerprint.clone()).collect();
        let distinct: BTreeSet<_> = got.iter().cloned().collect();
        ensure!(distinct.len() == got.len(), "{text}: a fingerprint appears twice");
        ensure!(distinct == expected, "{text}: {} results, {} expected", distinct.len(), expected.len());
        for r in &resp.results {
            ensure!(r.sources.len() >= 2, "{text}: {} has {} source(s)", r.fingerprint, r.sources.len());
        }
        checked += got.len();
    }
    ensure!(checked > 100, "only {checked} results checked");
    Ok(format!("{} queries, {checked} merged results, each with >= 2 sources and a unique fingerprint; 3 rank fixtures", queries.len()))
}

async fn fault_isolation() -> Result<String> {
    let clock = clock();
    let mut servers = Vec::new();
    let mut dirs = Vec::new();
    let registry = Registry::in_memory();
    for k in 1..=3u64 {
        let dir = tempfile::tempdir()?;
        let repo = open_repo(dir.path(), &format!("rep{k}"), 100)?;
        for g in generate_corpus(600 + k, 200, KindMix::default()) {
            repo.submit(g.record, g.kind, None, clock.advance(1))?;
        }
        let s = serve(repo, &clock).await?;
        registry.add(descriptor(&s, &[Mode::Search]))?;
        servers.push(s);
        dirs.push(dir);
    }
    let idx = tempfile::tempdir()?;
    let gw = Gateway::new(registry, Arc::new(harvester(open_index(idx.path())?, &clock)), GatewayConfig::default());
    let text = "redes OR ciência OR genoma";
    let canonical = bdl_core::query::canonical_text(&parse_query(text)?);
    let http = reqwest::Client::new();
    let mut healthy = BTreeSet::new();
    for s in [&servers[0], &servers[2]] {
        let req = SearchRequest { query: canonical.clone(), start: 0, max: 1000 };
        let resp: bdl_core::api::SearchResponse =
            http.post(format!("{}/search", s.base_url())).json(&req).send().await?.json().await?;
        healthy.extend(resp.records.iter().map(|h| fingerprint(&h.metadata)));
    }
    ensure!(!healthy.is_empty(), "healthy providers returned nothing");
    servers[1].service().set_search_delay(Duration::from_secs(10));
    let t = Instant::now();
    let resp = gw.unified_search(text, 0, 10_000).await?;
    let wall = t.elapsed();
    ensure!(wall < Duration::from_millis(2500), "took {wall:?}");
    ensure!(resp.partial, "partial flag not set");
    let statuses: Vec<_> = resp.outcomes.iter().map(|o| (o.provider_id.as_str(), o.status)).collect();
    ensure!(
        statuses
            == [("union", OutcomeStatus::Ok), ("rep1", OutcomeStatus::Ok), ("rep2", OutcomeStatus::Timeout), ("rep3", OutcomeStatus::Ok)],
        "outcomes {statuses:?}"
    );
    let got: BTreeSet<_> = resp.results.iter().map(|r| r.fingerprint.clone()).collect();
    let missing = healthy.difference(&got).count();
    ensure!(missing == 0, "{missing} healthy results missing");
    Ok(format!("returned in {} ms, partial, all {} healthy results present", wall.as_millis(), healthy.len()))
}

const QUALIFIERS: &[&str] = &["issued", "abstract", "citation", "degree-name", "conference-date", "x-Local"];
const SCHEMES: &[&str] = &["W3CDTF", "URI", "ISO639-1", "DDC"];
const LANGS: &[&str] = &["pt", "en", "pt-BR", "es"];
const CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', 'ç', 'ã', 'õ', 'é', 'í', 'ü', 'ñ', 'ß', '中', '文', 'Ω', '<', '>', '&', '"', '\'',
    ';', ':', '.', '-', '/', '(', ')', '€',
];

fn random_statement(rng: &mut ChaCha8Rng, element: ElementName) -> Statement {
    let len = rng.random_range(1..40);
    let mut value: String = (0..len).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect();
    value.insert(0, 'x');
    let mut s = Statement::new(element, value);
    if rng.random_bool(0.4) {
        s.qualifier = Some(QUALIFIERS[rng.random_range(0..QUALIFIERS.len())].into());
    }
    if rng.random_bool(0.3) {
        s.scheme = Some(SCHEMES[rng.random_range(0..SCHEMES.len())].into());
    }
    if rng.random_bool(0.3) {
        s.language = Some(LANGS[rng.random_range(0..LANGS.len())].into());
    }
    s
}

fn random_record(rng: &mut ChaCha8Rng) -> MetadataRecord {
    let mut statements: Vec<Statement> = ElementName::ALL.iter().map(|e| random_statement(rng, *e)).collect();
    for _ in 0..rng.random_range(0..10) {
        let e = ElementName::ALL[rng.random_range(0..15)];
        statements.push(random_statement(rng, e));
    }
    for i in (1..statements.len()).rev() {
        statements.swap(i, rng.random_range(0..=i));
    }
    MetadataRecord::new(statements)
}

fn html_for(r: &MetadataRecord) -> String {
    let esc = |s: &str| s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;");
    let mut out = String::from("<html><head><title>t</title>\n");
    for s in &r.statements {
        let q = s.qualifier.as_ref().map(|q| format!(".{q}")).unwrap_or_default();
        out.push_str(&format!("<meta name=\"DC.{}{q}\" content=\"{}\">\n", s.element.as_str(), esc(&s.value)));
    }
    out + "</head><body><p>x</p></body></html>"
}

fn text_for(r: &MetadataRecord) -> String {
    r.statements.iter().map(|s| format!("DC.{}: {}\n", s.element.as_str(), s.value)).collect()
}

fn mutate(rng: &mut ChaCha8Rng, doc: &[u8]) -> Vec<u8> {
    let mut out = doc.to_vec();
    for _ in 0..rng.random_range(1..=5) {
        let len = out.len();
        match rng.random_range(0..5) {
            0 if len > 0 => {
                let i = rng.random_range(0..len);
                out[i] = rng.random();
            }
            1 if len > 0 => {
                out.remove(rng.random_range(0..len));
            }
            2 => {
                const SPICE: &[u8] = b"<>&\"'/=;:\n\xc3\xff\x00";
                out.insert(rng.random_range(0..=len), SPICE[rng.random_range(0..SPICE.len())]);
            }
            3 if len > 0 => out.truncate(rng.random_range(0..len)),
            _ if len > 4 => {
                let a = rng.random_range(0..len - 2);
                let b = rng.random_range(a..len);
                let chunk = out[a..b].to_vec();
                let at = rng.random_range(0..=out.len());
                out.splice(at..at, chunk);
            }
            _ => {}
        }
    }
    out
}

async fn codec_round_trips() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut wires = Vec::new();
    for i in 0..1000 {
        let record = random_record(&mut rng);
        let header = RecordHeader::new(format!("oai:rep:{i}"), Datestamp::from_unix(rng.random_range(0..2_000_000_000)));
        let wire = WireRecord::live(header, record);
        let bytes = encode_record_xml(&wire);
        let back = decode_record_xml(&bytes).map_err(|e| anyhow!("record {i}: {e}"))?;
        ensure!(back == wire, "record {i} changed in the round trip");
        wires.push(wire);
    }
    let mut envelopes = Vec::new();
    for chunk in wires.chunks(100) {
        let resp = HarvestResponse {
            responded_at: Datestamp::from_unix(1_000_000_000),
            request: vec![("verb".into(), "ListRecords".into())],
            body: ResponseBody::Records { records: chunk.to_vec(), token: None },
        };
        let text = render_response(&resp);
        ensure!(parse_response(text.as_bytes()).map_err(|e| anyhow!("{e}"))? == resp, "envelope round trip");
        envelopes.push(text.into_bytes());
    }

    let docs: Vec<Vec<u8>> = wires
        .iter()
        .take(50)
        .flat_map(|w| {
            let r = w.record.as_ref().unwrap();
            [encode_record_xml(w), html_for(r).into_bytes(), text_for(r).into_bytes()]
        })
        .chain(envelopes.into_iter().take(2))
        .collect();
    let previous_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut panics = 0;
    for i in 0..10_000 {
        let m = mutate(&mut rng, &docs[i % docs.len()]);
        let r = std::panic::catch_unwind(|| {
            let _ = decode_record_xml(&m);
            let _ = parse_response(&m);
            let _ = extract_dc_from_html(&m);
            let _ = parse_tagged_text(&m);
        });
        panics += usize::from(r.is_err());
    }
    std::panic::set_hook(previous_hook);
    ensure!(panics == 0, "{panics} decoder panics");
    Ok("1000 records (all 15 elements) round-trip; 10000 mutated documents decoded without a crash".into())
}

async fn file_ingestion() -> Result<String> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../union/tests/fixtures");
    let expected: Vec<Value> = serde_json::from_slice(&std::fs::read(fixtures.join("ingest_expected.json"))?)?;
    let clock = clock();
    let dir = tempfile::tempdir()?;
    let h = harvester(open_index(dir.path())?, &clock);
    let job = h.ingest_files(&fixtures.join("ingest"), "files").map_err(|e| anyhow!("{e}"))?;
    ensure!(job.state == JobState::Succeeded, "ingest failed: {:?}", job.error_log);
    let entries: BTreeMap<String, bdl_union::IndexedEntry> =
        h.index().entries().into_iter().map(|e| (e.header.identifier.clone(), e)).collect();
    ensure!(entries.len() == 8 && expected.len() == 8, "{} records", entries.len());
    let mut html = 0;
    for exp in &expected {
        let file = exp["file"].as_str().unwrap_or_default();
        html += usize::from(file.ends_with(".html") || file.ends_with(".htm"));
        let id = exp["identifier"].as_str().unwrap_or_default();
        let e = entries.get(id).ok_or_else(|| anyhow!("{file}: no record {id}"))?;
        let want: MetadataRecord = serde_json::from_value(exp["metadata"].clone())?;
        ensure!(e.record.as_ref() == Some(&want), "{file}: metadata differs");
        let warnings = job.error_log.iter().filter(|l| l.starts_with(&format!("{file}: "))).count();
        ensure!(warnings as u64 == exp["warnings"].as_u64().unwrap_or(0), "{file}: {warnings} warnings");
    }
    ensure!(html == 5, "{html} HTML fixtures");
    let before = h.index().entries();
    let again = h.ingest_files(&fixtures.join("ingest"), "files").map_err(|e| anyhow!("{e}"))?;
    let c = again.counts;
    ensure!(again.state == JobState::Succeeded && c.upserted == 0 && c.deleted == 0, "re-ingest counts {c:?}");
    ensure!(h.index().entries() == before, "re-ingest changed the index");
    Ok("5 HTML + 3 tagged-text files give the 8 expected records; re-ingest is a no-op".into())
}

// ------------------------------------------------------------- durability

/// Independent replay of a journal directory: `snapshot.json` holds
/// `{"seq", "state"}`; `ops.log` lines are `<crc32 hex> <seq> <json>`. A line
/// that fails its checksum ends the replay.
fn read_journal(dir: &Path) -> Result<(Option<Value>, Vec<Value>)> {
    let (snapshot, snap_seq) = match std::fs::read(dir.join("snapshot.json")) {
        Ok(bytes) => {
            let v: Value = serde_json::from_slice(&bytes)?;
            let seq = v["seq"].as_u64().ok_or_else(|| anyhow!("snapshot without seq"))?;
            (Some(v["state"].clone()), seq)
        }
        Err(_) => (None, 0),
    };
    let log = std::fs::read(dir.join("ops.log")).unwrap_or_default();
    let mut ops = Vec::new();
    for line in log.split_inclusive(|b| *b == b'\n') {
        let Some(line) = line.strip_suffix(b"\n") else { break };
        let Ok(line) = std::str::from_utf8(line) else { break };
        let Some((crc, body)) = line.split_once(' ') else { break };
        if u32::from_str_radix(crc, 16).ok() != Some(crc32fast::hash(body.as_bytes())) {
            break;
        }
        let (seq, json) = body.split_once(' ').ok_or_else(|| anyhow!("malformed line"))?;
        if seq.parse::<u64>()? > snap_seq {
            ops.push(serde_json::from_str(json)?);
        }
    }
    Ok((snapshot, ops))
}

fn provider_oracle(dir: &Path) -> Result<BTreeMap<String, Value>> {
    let (snapshot, ops) = read_journal(dir)?;
    let mut items: BTreeMap<u64, Value> = BTreeMap::new();
    if let Some(s) = snapshot {
        for (k, v) in s["items"].as_object().into_iter().flatten() {
            items.insert(k.parse()?, v.clone());
        }
    }
    for op in ops {
        match op["op"].as_str() {
            Some("submit") => {
                items.insert(op["item"]["local_id"].as_u64().unwrap_or(0), op["item"].clone());
            }
            Some("update") => {
                if let Some(item) = items.get_mut(&op["local_id"].as_u64().unwrap_or(0)) {
                    item["record"] = op["record"].clone();
                    item["header"]["datestamp"] = op["datestamp"].clone();
                }
            }
            Some("delete") => {
                if let Some(item) = items.get_mut(&op["local_id"].as_u64().unwrap_or(0)) {
                    item["record"] = Value::Null;
                    item["header"]["deleted"] = json!(true);
                    item["header"]["datestamp"] = op["datestamp"].clone();
                }
            }
            other => bail!("unknown provider op {other:?}"),
        }
    }
    Ok(items
        .into_values()
        .map(|item| {
            let h = &item["header"];
            let id = h["identifier"].as_str().unwrap_or_default().to_string();
            let mut view = json!({
                "identifier": id,
                "datestamp": h["datestamp"],
                "deleted": h["deleted"].as_bool().unwrap_or(false),
            });
            if !item["record"].is_null() {
                view["record"] = item["record"].clone();
            }
            (id, view)
        })
        .collect())
}

fn union_oracle(dir: &Path) -> Result<(BTreeMap<(String, String), Value>, BTreeMap<String, String>)> {
    let (snapshot, ops) = read_journal(dir)?;
    let mut entries = BTreeMap::new();
    let mut checkpoints: BTreeMap<String, String> = BTreeMap::new();
    let mut upsert = |e: &Value| {
        let key = (e["provider_id"].as_str().unwrap_or_default().to_string(), e["header"]["identifier"].as_str().unwrap_or_default().to_string());
        let mut view = json!({
            "providerId": key.0,
            "identifier": key.1,
            "datestamp": e["header"]["datestamp"],
            "deleted": e["header"]["deleted"].as_bool().unwrap_or(false),
        });
        if !e["record"].is_null() {
            view["record"] = e["record"].clone();
        }
        entries.insert(key, view);
    };
    let mut checkpoint = |p: &str, until: &str| {
        // fixed-width UTC timestamps order lexicographically
        let slot = checkpoints.entry(p.to_string()).or_insert_with(|| until.to_string());
        if until > slot.as_str() {
            *slot = until.to_string();
        }
    };
    if let Some(s) = snapshot {
        s["entries"].as_array().into_iter().flatten().for_each(&mut upsert);
        for (p, until) in s["checkpoints"].as_object().into_iter().flatten() {
            checkpoint(p, until.as_str().unwrap_or_default());
        }
    }
    for op in ops {
        match op["op"].as_str() {
            Some("upsert") => upsert(&op["entry"]),
            Some("checkpoint") => checkpoint(op["provider_id"].as_str().unwrap_or_default(), op["until"].as_str().unwrap_or_default()),
            Some("job") => {}
            other => bail!("unknown union op {other:?}"),
        }
    }
    Ok((entries, checkpoints))
}

struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

impl Proc {
    /// SIGKILL: no shutdown hooks run.
    fn kill(mut self) -> Result<()> {
        self.0.kill()?;
        self.0.wait()?;
        Ok(())
    }
}

fn spawn_bdl(args: &[&str]) -> Result<Proc> {
    let child = Command::new(env!("CARGO_BIN_EXE_bdl"))
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .context("spawning bdl")?;
    Ok(Proc(child))
}

fn free_addr() -> Result<String> {
    let l = std::net::TcpListener::bind("127.0.0.1:0")?;
    Ok(l.local_addr()?.to_string())
}

async fn wait_ready(url: &str) -> Result<()> {
    let http = reqwest::Client::new();
    for _ in 0..400 {
        if http.get(url).send().await.is_ok_and(|r| r.status().is_success()) {
            return Ok(());
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    bail!("{url} never became ready")
}

fn append_torn_line(dir: &Path) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().append(true).open(dir.join("ops.log"))?;
    f.write_all(b"0badc0de 999999 {\"op\":\"sub")?;
    Ok(())
}

async fn provider_durability(work: &TempDir) -> Result<String> {
    let data = work.path().join("rep1");
    let addr = free_addr()?;
    let config = work.path().join("rep1.toml");
    std::fs::write(
        &config,
        format!(
            "repositoryId = \"rep1\"\ndisplayName = \"Rep\"\nadminContact = \"a@b.c\"\nlistenAddress = \"{addr}\"\ndataDir = \"{}\"\nsnapshotEvery = 40\n",
            data.display()
        ),
    )?;
    let args = ["provider", "serve", "--config", config.to_str().unwrap()];
    let base = format!("http://{addr}");
    let proc = spawn_bdl(&args)?;
    wait_ready(&format!("{base}/oai?verb=Identify")).await?;

    // writer: submissions with interleaved updates and deletions, until the
    // process dies under it
    let client = ProviderClient::new(&base);
    let writer = tokio::spawn(async move {
        let mut acked: Vec<String> = Vec::new();
        let mut deleted: BTreeSet<String> = BTreeSet::new();
        for i in 0..100_000u64 {
            let g = generate_record(900, i, KindMix::default());
            let r = if i % 5 == 4 && acked.len() > 3 {
                let target = acked[(i as usize * 7) % acked.len()].clone();
                if deleted.contains(&target) {
                    continue;
                }
                let g = generate_record(901, i, KindMix::only(g.kind));
                client.update(&target, g.record).await.map(|_| ()).or_else(|e| {
                    // kinds differ between the two draws; a rejected update is fine
                    if e.to_string().contains("422") { Ok(()) } else { Err(e) }
                })
            } else if i % 7 == 6 && acked.len() > 3 {
                let target = acked[(i as usize * 3) % acked.len()].clone();
                if !deleted.insert(target.clone()) {
                    continue;
                }
                client.delete(&target).await.map(|_| ())
            } else {
                client.submit(g.kind, g.record).await.map(|ack| acked.push(ack.identifier))
            };
            if r.is_err() {
                break;
            }
        }
        (acked, deleted)
    });
    tokio::time::sleep(Duration::from_millis(700)).await;
    proc.kill()?;
    let (acked, deleted) = writer.await?;
    append_torn_line(&data)?;
    let oracle = provider_oracle(&data)?;

    let proc = spawn_bdl(&args)?;
    wait_ready(&format!("{base}/oai?verb=Identify")).await?;
    let records = ProviderClient::new(&base).list_records().await?;
    drop(proc);
    let got: BTreeMap<String, Value> = records.iter().map(|w| (w.header.identifier.clone(), entry_view(w))).collect();
    ensure!(acked.len() > 20, "only {} writes acknowledged before the kill", acked.len());
    ensure!(got == oracle, "restarted provider ({} records) differs from log replay ({})", got.len(), oracle.len());
    for id in &acked {
        ensure!(got.contains_key(id), "acknowledged submission {id} lost");
    }
    let tombstones = deleted.iter().filter(|id| got[*id]["deleted"] == true).count();
    // the last deletion may have been in flight at the kill
    ensure!(tombstones + 1 >= deleted.len(), "{} of {} acknowledged deletions lost", deleted.len() - tombstones, deleted.len());
    Ok(format!("provider: {} records equal the replay, {} acknowledged submissions kept", got.len(), acked.len()))
}

async fn union_durability(work: &TempDir) -> Result<String> {
    let clock = clock();
    let pdir = tempfile::tempdir()?;
    let repo = open_repo(pdir.path(), "big", 10)?;
    for g in generate_corpus(950, 3000, KindMix::default()) {
        repo.submit(g.record, g.kind, None, clock.advance(1))?;
    }
    let server = serve(repo, &clock).await?;
    let registry = work.path().join("registry.json");
    std::fs::write(
        &registry,
        serde_json::to_vec(&json!({ "providers": [descriptor(&server, &[Mode::Harvest])] }))?,
    )?;
    let data = work.path().join("union");
    let addr = free_addr()?;
    let args = [
        "gateway", "serve", "--registry", registry.to_str().unwrap(), "--data-dir", data.to_str().unwrap(), "--listen", &addr,
        "--no-scheduler",
    ];
    let base = format!("http://{addr}");
    let gw = GatewayClient::new(&base);
    let proc = spawn_bdl(&args)?;
    wait_ready(&format!("{base}/api/providers")).await?;
    gw.run_harvest("big", bdl_union::JobKind::Full).await?;
    let t = Instant::now();
    loop {
        let n = gw.index_stats(None).await?["entries"].as_u64().unwrap_or(0);
        if n >= 300 {
            break;
        }
        ensure!(t.elapsed() < Duration::from_secs(20), "harvest stalled at {n}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    proc.kill()?;
    append_torn_line(&data)?;
    let (oracle, checkpoints) = union_oracle(&data)?;
    ensure!(oracle.len() < 3000, "harvest finished before the kill");

    let proc = spawn_bdl(&args)?;
    wait_ready(&format!("{base}/api/providers")).await?;
    let got: Vec<Value> = reqwest::get(format!("{base}/api/index/entries")).await?.json().await?;
    let expected: Vec<Value> = oracle.into_values().collect();
    ensure!(got == expected, "restarted index ({}) differs from log replay ({})", got.len(), expected.len());
    let cps = gw.checkpoints().await?;
    let got_cps: BTreeMap<String, String> = cps
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| (c["providerId"].as_str().unwrap_or_default().into(), c["lastSuccessUntil"].as_str().unwrap_or_default().into()))
        .collect();
    ensure!(got_cps == checkpoints, "checkpoints {got_cps:?} vs {checkpoints:?}");

    // the recovered index keeps working
    let job = gw.run_harvest("big", bdl_union::JobKind::Full).await?;
    let job = gw.wait_job(job.job_id, Duration::from_millis(50)).await?;
    ensure!(job.state == JobState::Succeeded, "post-restart harvest failed");
    let total = gw.index_stats(None).await?["entries"].as_u64().unwrap_or(0);
    ensure!(total == 3000, "{total} entries after re-harvest");
    drop(proc);
    Ok(format!("union: {} entries equal the replay; re-harvest completes to 3000", expected.len()))
}

async fn durability() -> Result<String> {
    let work = tempfile::tempdir()?;
    let p = provider_durability(&work).await?;
    let u = union_durability(&work).await?;
    Ok(format!("{p}; {u}"))
}

// ------------------------------------------------------------------ driver

fn run<F: Future<Output = Result<String>>>(rt: &tokio::runtime::Runtime, name: &str, f: impl FnOnce() -> F) -> bool {
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| rt.block_on(f())));
    let (ok, detail) = match outcome {
        Ok(Ok(detail)) => (true, detail),
        Ok(Err(e)) => (false, format!("{e:#}")),
        Err(p) => (false, p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
    };
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let results = [
        run(&rt, "harvest-completeness", harvest_completeness),
        run(&rt, "paging-equivalence", paging_equivalence),
        run(&rt, "incremental-convergence", incremental_convergence),
        run(&rt, "query-oracle", query_oracle),
        run(&rt, "federation-equivalence", federation_equivalence),
        run(&rt, "fault-isolation", fault_isolation),
        run(&rt, "codec-round-trips", codec_round_trips),
        run(&rt, "file-ingestion", file_ingestion),
        run(&rt, "durability", durability),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
