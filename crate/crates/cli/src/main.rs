use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use peer_agent_core::agent::AgentPersona;
use peer_agent_core::config::EngineConfig;
use peer_agent_core::domain::DilemmaCatalog;
use peer_agent_core::exec::Execution;
use peer_agent_core::provider::{MockProvider, Provider};
use peer_agent_core::session::{parse_log, replay, Runtime};
use peer_agent_core::sim::{inspect, run_batch, run_script, Script};
use peer_agent_service::{AppState, LogStore, RemoteConfig, RemoteProvider, ServiceConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "peer-agent", version, about = "Peer agent for moral dilemma discussions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    /// Chat-completions endpoint from PROVIDER_URL, PROVIDER_KEY, PROVIDER_MODEL.
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and WebSocket service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Engine config (TOML). PEER_<SECTION>__<KEY> variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mock")]
        provider: ProviderKind,
        /// Dilemma catalog (JSONL); the bundled one otherwise.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Persona (JSON); the bundled one otherwise.
        #[arg(long)]
        persona: Option<PathBuf>,
        /// Directory for session logs. Without it sessions live in memory only.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Rebuild a session from its log and print the final state.
    Replay { log: PathBuf },
    /// Play a scripted session with the mock provider.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run this many consecutive seeds starting at --seed and print one summary per run.
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        sequential: bool,
        /// Write the event log of a single run here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Summarise a session log.
    Inspect {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn load_catalog(path: Option<&Path>) -> Result<DilemmaCatalog> {
    match path {
        None => Ok(DilemmaCatalog::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(DilemmaCatalog::from_jsonl(&text)?)
        }
    }
}

fn read_log(path: &Path) -> Result<Vec<peer_agent_core::session::SessionEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_log(&text)?;
    if let Some(bytes) = parsed.torn_tail {
        tracing::warn!(bytes, "ignoring torn final line");
    }
    Ok(parsed.events)
}

async fn serve(
    addr: SocketAddr,
    config: Option<PathBuf>,
    provider: ProviderKind,
    catalog: Option<PathBuf>,
    persona: Option<PathBuf>,
    log_dir: Option<PathBuf>,
) -> Result<()> {
    let engine = match &config {
        Some(p) => EngineConfig::from_file(p)?,
        None => EngineConfig::default(),
    }
    .with_env_overrides()?;
    let persona = match &persona {
        Some(p) => AgentPersona::from_file(p)?,
        None => AgentPersona::default_peer(),
    };
    let provider: Arc<dyn Provider> = match provider {
        ProviderKind::Mock => Arc::new(MockProvider::builtin()),
        ProviderKind::Remote => Arc::new(RemoteProvider::new(RemoteConfig::from_env().map_err(anyhow::Error::msg)?)),
    };
    let store = log_dir.map(LogStore::new).transpose()?;
    let config = ServiceConfig { engine, catalog: load_catalog(catalog.as_deref())?, persona };
    let state = AppState::new(Runtime::new(provider), config, store)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = state.session_ids().len(), "listening");
    peer_agent_service::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { port, host, config, provider, catalog, persona, log_dir } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            tokio::runtime::Runtime::new()?.block_on(serve(addr, config, provider, catalog, persona, log_dir))
        }
        Command::Replay { log } => {
            let state = replay(&read_log(&log)?)?;
            println!("{}", serde_json::to_string_pretty(&state)?);
            Ok(())
        }
        Command::Simulate { script, seed, runs, sequential, out, catalog } => {
            let text = fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let script = Script::from_json(&text)?;
            let catalog = load_catalog(catalog.as_deref())?;
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let rt = Runtime::new(Arc::new(MockProvider::builtin())).with_exec(exec);
            match runs {
                Some(n) => {
                    if out.is_some() {
                        bail!("--out writes a single run; drop --runs");
                    }
                    let seeds: Vec<u64> = (seed..seed.saturating_add(n)).collect();
                    for result in run_batch(&script, &seeds, &rt, &catalog) {
                        println!("{}", serde_json::to_string(&result?)?);
                    }
                }
                None => {
                    let run = run_script(&script, seed, &rt, &catalog)?;
                    let log: String = run.events.iter().map(|e| e.to_json_line() + "\n").collect();
                    match out {
                        Some(path) => fs::write(&path, log).with_context(|| format!("writing {}", path.display()))?,
                        None => print!("{log}"),
                    }
                    eprintln!("{}", inspect(&run.events)?);
                }
            }
            Ok(())
        }
        Command::Inspect { log, json } => {
            let summary = inspect(&read_log(&log)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!("{summary}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
