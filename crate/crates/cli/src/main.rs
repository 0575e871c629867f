use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use bdl_cli::client::GatewayClient;
use bdl_cli::scenario::{parse_scenario, run_scenario, DEFAULT_SEED};
use bdl_core::clock::SystemClock;
use bdl_core::codec::write_dc;
use bdl_core::corpus::{generate_record, KindMix};
use bdl_core::dc::{DocumentKind, ElementName};
use bdl_gateway::{Gateway, GatewayConfig, GatewayServer, Registry};
use bdl_provider::{ProviderServer, ProviderService, Repository, RepositoryConfig};
use bdl_union::{Harvester, HttpTransport, IndexOptions, JobKind, JobState, Mode, ProviderDescriptor, RetryPolicy, UnionIndex};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bdl", version, about = "Federated digital library: providers, harvester, union index and gateway")]
struct Cli {
    /// Gateway base URL used by client commands.
    #[arg(long, global = true, env = "BDL_GATEWAY", default_value = "http://127.0.0.1:8080")]
    gateway: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a data provider.
    Provider {
        #[command(subcommand)]
        command: ProviderCommand,
    },
    /// Run the gateway with its union index and harvester.
    Gateway {
        #[command(subcommand)]
        command: GatewayCommand,
    },
    /// Start harvests and inspect jobs.
    Harvest {
        #[command(subcommand)]
        command: HarvestCommand,
    },
    /// Ingest a directory of HTML and tagged-text files into the union index.
    IngestFiles {
        dir: PathBuf,
        /// Provider id the records are filed under.
        #[arg(long = "as")]
        provider_id: String,
    },
    /// Query the gateway.
    Search {
        query: String,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = 10)]
        max: usize,
        /// Print the raw response.
        #[arg(long)]
        json: bool,
    },
    /// Manage registered providers.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Run simulation scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Synthetic corpora.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum ProviderCommand {
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum GatewayCommand {
    Serve {
        #[arg(long)]
        registry: PathBuf,
        /// Union index directory.
        #[arg(long, default_value = "bdl-union")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// How often due providers are checked, in seconds.
        #[arg(long, default_value_t = 30)]
        poll_tick: u64,
        /// Only harvest on request.
        #[arg(long)]
        no_scheduler: bool,
    },
}

#[derive(Subcommand)]
enum HarvestCommand {
    Run {
        provider_id: String,
        /// Re-harvest everything instead of changes since the checkpoint.
        #[arg(long)]
        full: bool,
        /// Return once the job is queued.
        #[arg(long)]
        no_wait: bool,
    },
    Status,
}

#[derive(Args)]
struct RegistryTarget {
    /// Edit a registry file directly instead of going through the gateway.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RegistryCommand {
    Add {
        provider_id: String,
        base_url: String,
        #[arg(long, value_delimiter = ',', default_value = "harvest,search")]
        modes: Vec<String>,
        /// Seconds between scheduled harvests.
        #[arg(long, default_value_t = 3600)]
        poll_interval: u64,
        #[command(flatten)]
        target: RegistryTarget,
    },
    Remove {
        provider_id: String,
        #[command(flatten)]
        target: RegistryTarget,
    },
    List {
        #[command(flatten)]
        target: RegistryTarget,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Run {
        file: PathBuf,
        /// Overrides the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
}

async fn provider_serve(config: PathBuf) -> Result<()> {
    let config = RepositoryConfig::load(&config)?;
    let listen = config.listen_address.clone();
    let repo = Repository::open(config).context("opening repository")?;
    let server = ProviderServer::bind(ProviderService::new(repo, Arc::new(SystemClock)), &listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    println!("provider {} listening on {}", server.service().repository().repository_id(), server.base_url());
    shutdown_signal().await;
    let service = server.service().clone();
    server.shutdown().await;
    service.repository().checkpoint()?;
    Ok(())
}

async fn gateway_serve(registry: PathBuf, data_dir: PathBuf, listen: String, poll_tick: u64, no_scheduler: bool) -> Result<()> {
    let registry = Registry::load(registry)?;
    let index = Arc::new(UnionIndex::open(&data_dir, IndexOptions::default()).context("opening union index")?);
    let harvester =
        Harvester::new(index.clone(), Arc::new(HttpTransport::default()), Arc::new(SystemClock), RetryPolicy::default());
    let gateway = Gateway::new(registry, Arc::new(harvester), GatewayConfig::default());
    let scheduler = (!no_scheduler).then(|| gateway.spawn_scheduler(Duration::from_secs(poll_tick.max(1))));
    let server = GatewayServer::bind(gateway, &listen).await.with_context(|| format!("binding {listen}"))?;
    println!("gateway listening on {}", server.base_url());
    shutdown_signal().await;
    if let Some(task) = scheduler {
        task.abort();
    }
    server.shutdown().await;
    index.snapshot()?;
    Ok(())
}

fn print_job(job: &bdl_union::HarvestJob) {
    let c = &job.counts;
    println!(
        "job {} {} {:?} {:?}: fetched {} upserted {} deleted {} skipped {}",
        job.job_id, job.provider_id, job.kind, job.state, c.fetched, c.upserted, c.deleted, c.skipped
    );
    for line in &job.error_log {
        println!("  {line}");
    }
}

async fn harvest(gw: &GatewayClient, command: HarvestCommand) -> Result<()> {
    match command {
        HarvestCommand::Run { provider_id, full, no_wait } => {
            let kind = if full { JobKind::Full } else { JobKind::Incremental };
            let job = gw.run_harvest(&provider_id, kind).await?;
            if no_wait {
                print_job(&job);
                return Ok(());
            }
            let job = gw.wait_job(job.job_id, Duration::from_millis(250)).await?;
            print_job(&job);
            if job.state == JobState::Failed {
                bail!("harvest of {provider_id} failed");
            }
        }
        HarvestCommand::Status => {
            for job in gw.jobs().await? {
                print_job(&job);
            }
            for cp in gw.checkpoints().await?.as_array().into_iter().flatten() {
                println!("checkpoint {} {}", cp["providerId"].as_str().unwrap_or("?"), cp["lastSuccessUntil"].as_str().unwrap_or("?"));
            }
        }
    }
    Ok(())
}

fn print_search(body: &Value) {
    if body["partial"] == true {
        println!("partial results: some providers did not answer");
    }
    for o in body["outcomes"].as_array().into_iter().flatten() {
        println!("  {} {} {} ms", o["provider"].as_str().unwrap_or("?"), o["status"].as_str().unwrap_or("?"), o["elapsedMs"]);
    }
    println!("{} results", body["total"]);
    let start = body["start"].as_u64().unwrap_or(0);
    for (i, r) in body["results"].as_array().into_iter().flatten().enumerate() {
        let title = r["record"]
            .as_array()
            .and_then(|st| st.iter().find(|s| s["element"] == ElementName::Title.as_str()))
            .and_then(|s| s["value"].as_str())
            .unwrap_or("(untitled)");
        let sources: Vec<String> = r["sources"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|s| format!("{}#{}", s["provider"].as_str().unwrap_or("?"), s["rank"]))
            .collect();
        println!("{:>4}. [{}] {title}  ({})", start as usize + i + 1, r["scoreExact"].as_str().unwrap_or("?"), sources.join(", "));
    }
}

fn parse_modes(modes: &[String]) -> Result<Vec<Mode>> {
    modes
        .iter()
        .map(|m| match m.as_str() {
            "harvest" => Ok(Mode::Harvest),
            "search" => Ok(Mode::Search),
            other => bail!("unknown mode `{other}`"),
        })
        .collect()
}

fn print_providers(list: &[ProviderDescriptor]) {
    for d in list {
        let modes: Vec<&str> = d.modes.iter().map(|m| if *m == Mode::Harvest { "harvest" } else { "search" }).collect();
        println!("{}\t{}\t{}\tevery {} s", d.provider_id, d.base_url, modes.join(","), d.poll_interval);
    }
}

async fn registry(gw: &GatewayClient, command: RegistryCommand) -> Result<()> {
    let list = match command {
        RegistryCommand::Add { provider_id, base_url, modes, poll_interval, target } => {
            let mut d = ProviderDescriptor::new(provider_id, base_url, &parse_modes(&modes)?);
            d.poll_interval = poll_interval;
            match target.file {
                Some(f) => (*Registry::load(f)?.add(d)?).clone(),
                None => gw.add_provider(&d).await?,
            }
        }
        RegistryCommand::Remove { provider_id, target } => match target.file {
            Some(f) => (*Registry::load(f)?.remove(&provider_id)?).clone(),
            None => gw.remove_provider(&provider_id).await?,
        },
        RegistryCommand::List { target } => match target.file {
            Some(f) => (*Registry::load(f)?.list()).clone(),
            None => gw.providers().await?,
        },
    };
    print_providers(&list);
    Ok(())
}

/// Writes `records.jsonl` (one `{index, kind, metadata}` per line) and one
/// Dublin Core XML file per record under `dc/`.
fn corpus_gen(seed: u64, n: usize, out: PathBuf) -> Result<()> {
    let dc_dir = out.join("dc");
    fs::create_dir_all(&dc_dir)?;
    let mut lines = String::new();
    for i in 0..n as u64 {
        let g = generate_record(seed, i, KindMix::default());
        lines.push_str(&serde_json::to_string(&json!({ "index": i, "kind": g.kind, "metadata": g.record }))?);
        lines.push('\n');
        let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        write_dc(&mut xml, &g.record);
        xml.push('\n');
        fs::write(dc_dir.join(format!("{i:06}.xml")), xml)?;
    }
    fs::write(out.join("records.jsonl"), lines)?;
    let kinds: Vec<&str> = DocumentKind::ALL.iter().map(|k| k.as_str()).collect();
    println!("wrote {n} records ({}) to {}", kinds.join(", "), out.display());
    Ok(())
}

async fn scenario(file: PathBuf, seed: Option<u64>, report_path: Option<PathBuf>) -> Result<bool> {
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let scenario = parse_scenario(&text).with_context(|| file.display().to_string())?;
    let seed = seed.or(scenario.seed).unwrap_or(DEFAULT_SEED);
    let report = run_scenario(&scenario, seed).await?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = report_path {
        fs::write(path, format!("{text}\n"))?;
    }
    Ok(report.passed)
}

async fn run(cli: Cli) -> Result<bool> {
    let gw = GatewayClient::new(&cli.gateway);
    match cli.command {
        Command::Provider { command: ProviderCommand::Serve { config } } => provider_serve(config).await?,
        Command::Gateway { command: GatewayCommand::Serve { registry, data_dir, listen, poll_tick, no_scheduler } } => {
            gateway_serve(registry, data_dir, listen, poll_tick, no_scheduler).await?
        }
        Command::Harvest { command } => harvest(&gw, command).await?,
        Command::IngestFiles { dir, provider_id } => {
            let dir = fs::canonicalize(&dir).with_context(|| format!("reading {}", dir.display()))?;
            let job = gw.ingest(&dir, &provider_id).await?;
            print_job(&job);
            if job.state == JobState::Failed {
                return Ok(false);
            }
        }
        Command::Search { query, start, max, json } => {
            let body = gw.search(&query, start, max).await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&body)?);
            } else {
                print_search(&body);
            }
        }
        Command::Registry { command } => registry(&gw, command).await?,
        Command::Scenario { command: ScenarioCommand::Run { file, seed, report } } => {
            return scenario(file, seed, report).await;
        }
        Command::Corpus { command: CorpusCommand::Gen { seed, n, out } } => corpus_gen(seed, n, out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("BDL_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
