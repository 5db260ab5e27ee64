use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use metactl::{router, AppState, LlmChoice, ServiceConfig};
use metactl_core::dispatch::AssetCatalog;
use metactl_core::interpret::ParseMode;
use metactl_core::llm::{
    parse_script, HttpBackendConfig, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL,
};
use metactl_core::replay::{load_user_script, replay_run, ReplayConfig};
use metactl_core::scenario::{load_scenario, Scenario, ScenarioError};
use metactl_core::session::EngineSettings;

#[derive(Debug, Parser)]
#[command(name = "metactl", version, about = "LLM meta-control dialogue engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session service.
    Serve(ServeArgs),
    /// Run one session offline from scripts and print its summary.
    Replay(ReplayArgs),
    /// Check a scenario document.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Clone)]
enum LlmSpec {
    Scripted(PathBuf),
    Http,
}

impl FromStr for LlmSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "http" => Ok(LlmSpec::Http),
            Some(("scripted", path)) if !path.is_empty() => Ok(LlmSpec::Scripted(path.into())),
            _ => Err(format!("expected `http` or `scripted:<file>`, got `{s}`")),
        }
    }
}

#[derive(Debug, Args)]
struct EngineArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Asset catalog for the image command.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[arg(long, default_value = "strict")]
    parse_mode: ParseMode,
    /// Overrides the scenario's session budget.
    #[arg(long)]
    budget_seconds: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// `scripted:<file>` or `http`.
    #[arg(long, default_value = "http")]
    llm: LlmSpec,
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long, default_value = "transcripts")]
    transcript_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    llm_script: PathBuf,
    #[arg(long)]
    asr_script: PathBuf,
    /// Write the transcript here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &EngineArgs) -> anyhow::Result<(Scenario, AssetCatalog, EngineSettings)> {
    let scenario = load_scenario(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let catalog = match &args.assets {
        Some(path) => {
            AssetCatalog::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => AssetCatalog::default(),
    };
    if args.budget_seconds == Some(0) {
        bail!("--budget-seconds must be positive");
    }
    let settings = EngineSettings {
        parse_mode: args.parse_mode,
        budget_ms: args.budget_seconds.map(|s| s * 1_000),
        ..EngineSettings::default()
    };
    Ok((scenario, catalog, settings))
}

fn read_llm_script(path: &PathBuf) -> anyhow::Result<Vec<metactl_core::llm::ScriptEntry>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_script(&text).with_context(|| format!("parsing {}", path.display()))
}

async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let (scenario, catalog, settings) = load(&args.engine)?;
    let llm = match &args.llm {
        LlmSpec::Scripted(path) => LlmChoice::Scripted(read_llm_script(path)?),
        LlmSpec::Http => {
            if std::env::var_os(&args.api_key_env).is_none() {
                tracing::warn!(
                    "{} is not set; requests will be unauthenticated",
                    args.api_key_env
                );
            }
            LlmChoice::Http(HttpBackendConfig {
                base_url: args.base_url.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
            })
        }
    };
    let state = AppState::new(ServiceConfig {
        scenario,
        catalog,
        settings,
        llm,
        transcript_dir: args.transcript_dir.clone(),
        wall_tick: None,
    });
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let (scenario, catalog, settings) = load(&args.engine)?;
    let llm_script = read_llm_script(&args.llm_script)?;
    let user_script = load_user_script(&args.asr_script)?;
    let outcome = replay_run(ReplayConfig {
        scenario,
        catalog,
        settings,
        llm_script,
        user_script,
        max_ticks: None,
    })?;
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, outcome.transcript())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let summary = serde_json::json!({
        "ended_at_ms": outcome.ended_at_ms,
        "events": outcome.events.len(),
        "config_hash": outcome.header.config_hash,
        "summary": outcome.summary,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// The error chain on one line, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let cause = cause.to_string();
        if !msg.contains(&cause) {
            msg.push_str(": ");
            msg.push_str(&cause);
        }
    }
    msg
}

fn validate(path: PathBuf) -> anyhow::Result<()> {
    let s = match load_scenario(&path) {
        Ok(s) => s,
        Err(ScenarioError::InvariantViolation(violations)) => {
            for v in &violations {
                eprintln!("{}: {v}", path.display());
            }
            bail!("{} violation(s) in {}", violations.len(), path.display());
        }
        Err(e) => return Err(e).with_context(|| format!("{} is not valid", path.display())),
    };
    println!(
        "{}: ok ({} tasks, {} commands, {} speech types, budget {} s)",
        s.id,
        s.tasks.len(),
        s.command_table.len(),
        s.turn_class_table.len(),
        s.session_budget
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match Cli::parse().command {
        Command::Serve(args) => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(serve(args))),
        Command::Replay(args) => replay(args),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
