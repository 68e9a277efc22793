//! Command-line entry points: single-participant offline runs, batch
//! aggregation and the HTTP server.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use wrapped_core::aggregate::{export_plot_data, run_study, AggregateError, Demographics, ParticipantRecord};
use wrapped_core::ingest::{detect_format, parse_archive_report, IngestError};
use wrapped_core::pipeline::{run_participant, PipelineError, RunManifest};
use wrapped_core::redact::RedactionAudit;

use crate::clock::SystemClock;
use crate::config::{Config, ConfigError, ProviderKind};
use crate::service::Service;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("pipeline failed ({code}): {0}", code = .0.code())]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("invalid participant id {0:?}: use letters, digits, '-' and '_'")]
    ParticipantId(String),
    #[error("no participant records in {0}")]
    NoProfiles(PathBuf),
    #[error("server error: {0}")]
    Serve(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    /// Deterministic offline providers.
    Mock,
    /// Remote providers from the config file.
    Real,
}

#[derive(Debug, Parser)]
#[command(name = "wrapped", version, about = "Facet profiles and aggregate reports from chat-assistant exports")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile one participant's archive offline.
    Run {
        archive: PathBuf,
        /// auto, neutral, chatgpt or claude.
        #[arg(long, default_value = "auto")]
        format: String,
        #[arg(long, value_enum, default_value_t = ProviderChoice::Mock)]
        providers: ProviderChoice,
        /// Directory receiving `<participant>.json` and `manifests/<participant>.json`.
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the id in a neutral archive, else the file stem.
        #[arg(long)]
        participant_id: Option<String>,
        /// JSON file with survey answers.
        #[arg(long)]
        demographics: Option<PathBuf>,
    },
    /// Cluster a directory of participant records into an aggregate report.
    Aggregate {
        profiles_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ProviderChoice::Mock)]
        providers: ProviderChoice,
    },
    /// Serve the HTTP API.
    Serve,
}

fn load_config(path: Option<&Path>, providers: Option<ProviderChoice>) -> Result<Config, CliError> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match providers {
        Some(ProviderChoice::Mock) => {
            cfg.providers.kind = ProviderKind::Mock;
            cfg.providers.embedder = None;
        }
        Some(ProviderChoice::Real) => cfg.providers.kind = ProviderKind::Remote,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn config_value(cfg: &Config) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

#[derive(Debug, Serialize)]
struct RunOutput {
    manifest: RunManifest,
    audit: RedactionAudit,
    dropped_count: usize,
    truncated_count: usize,
    skipped_conversations: usize,
}

/// `wrapped run`. Returns the path of the written record.
pub fn run(
    config: &Config,
    archive: &Path,
    format: &str,
    out: &Path,
    participant_id: Option<&str>,
    demographics: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let bytes = fs::read(archive).map_err(io_err(archive))?;
    let filename = archive.file_name().and_then(|n| n.to_str());
    let source = detect_format(Some(format), filename, &bytes)?;
    let parsed = parse_archive_report(&bytes, source)?;
    let pid = match participant_id {
        Some(id) => id.to_string(),
        None => parsed.participant_id.clone().unwrap_or_else(|| {
            let stem = archive.file_stem().and_then(|s| s.to_str()).unwrap_or("participant");
            stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
        }),
    };
    if !valid_id(&pid) {
        return Err(CliError::ParticipantId(pid));
    }
    let demographics: Option<Demographics> = match demographics {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Json {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?)
        }
        None => None,
    };
    let providers = config.build_providers()?;
    let result = run_participant(
        &pid,
        &parsed.conversations,
        &*providers.detector,
        &*providers.generator,
        &config.pipeline_config(),
    )?;
    let record = ParticipantRecord {
        demographics,
        ..result.record
    };
    let mut manifest = RunManifest::new("run", &*providers.generator, config_value(config)).with_detector(&*providers.detector);
    manifest.participants = 1;
    let record_path = out.join(format!("{pid}.json"));
    write_file(&record_path, &to_json(&record))?;
    write_file(
        &out.join("manifests").join(format!("{pid}.json")),
        &to_json(&RunOutput {
            manifest,
            audit: result.audit,
            dropped_count: result.dropped_count,
            truncated_count: result.truncated_count,
            skipped_conversations: parsed.skipped.len(),
        }),
    )?;
    Ok(record_path)
}

/// Reads every `*.json` file directly under `dir` as a participant record.
pub fn read_records(dir: &Path) -> Result<Vec<ParticipantRecord>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Json {
                path: p.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// `wrapped aggregate`. Writes `aggregate_report.json`, `clusterings.json`,
/// `manifest.json` and `plot_data/`. Returns the report path.
pub fn aggregate(config: &Config, profiles_dir: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let records = read_records(profiles_dir)?;
    if records.is_empty() {
        return Err(CliError::NoProfiles(profiles_dir.to_path_buf()));
    }
    let providers = config.build_providers()?;
    let n = records.len();
    let (report, clusterings) = run_study(
        records,
        &*providers.embedder,
        &*providers.generator,
        &config.cluster_config(),
        config.subgroup_config(),
    )?;
    let report_path = out.join("aggregate_report.json");
    write_file(&report_path, &report.to_json())?;
    write_file(&out.join("clusterings.json"), &to_json(&clusterings))?;
    let mut manifest = RunManifest::new("aggregate", &*providers.generator, config_value(config)).with_embedder(&*providers.embedder);
    manifest.participants = n;
    write_file(&out.join("manifest.json"), &to_json(&manifest))?;
    let plots = out.join("plot_data");
    export_plot_data(&report, &plots).map_err(io_err(&plots))?;
    Ok(report_path)
}

/// `wrapped serve`. Runs until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), CliError> {
    let providers = config.build_providers()?;
    let bind = config.server.bind.clone();
    let svc = Service::new(config, providers, Arc::new(SystemClock)).map_err(|e| CliError::Serve(e.to_string()))?;
    let sweeper = Arc::clone(&svc);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(std::time::Duration::from_secs(600));
        loop {
            tick.tick().await;
            let purged = sweeper.sweep();
            if purged > 0 {
                log::info!("purged {purged} expired sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| CliError::Serve(format!("{bind}: {e}")))?;
    log::info!("listening on {bind}");
    axum::serve(listener, crate::api::router(svc).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Serve(e.to_string()))
}

/// Dispatches a parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Run {
            archive,
            format,
            providers,
            out,
            participant_id,
            demographics,
        } => {
            let cfg = load_config(config_path, Some(providers))?;
            let path = run(&cfg, &archive, &format, &out, participant_id.as_deref(), demographics.as_deref())?;
            println!("{}", path.display());
        }
        Command::Aggregate {
            profiles_dir,
            out,
            providers,
        } => {
            let cfg = load_config(config_path, Some(providers))?;
            let path = aggregate(&cfg, &profiles_dir, &out)?;
            println!("{}", path.display());
        }
        Command::Serve => {
            let cfg = load_config(config_path, None)?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Serve(e.to_string()))?;
            runtime.block_on(serve(cfg))?;
        }
    }
    Ok(())
}
