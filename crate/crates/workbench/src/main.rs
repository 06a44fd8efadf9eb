use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use ppm_core::eval::SortKey;
use ppm_core::prelude::*;
use ppm_workbench::experiment::{run_experiment, ExperimentConfig};
use ppm_workbench::http::{split_ids, ApiError};
use ppm_workbench::orchestrator::{JobFilter, JobStatus};
use ppm_workbench::service::{
    ExplanationLevel, ExplanationRequest, Part, PredictRequest, ResultsQuery, Service, SplitRequest, TraceDocument,
};
use ppm_workbench::settings::Settings;
use ppm_workbench::synth::{planted_log, SynthSpec};
use ppm_workbench::xes::serialize_xes;
use ppm_workbench::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ppm", version, about = "Predictive process monitoring workbench")]
struct Cli {
    /// Overrides PPM_STORAGE_DIR.
    #[arg(long, global = true)]
    storage_dir: Option<PathBuf>,
    /// Overrides PPM_CACHE_DIR.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Overrides PPM_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ordering {
    TemporalStart,
    TemporalEnd,
    AsIs,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Event,
    Trace,
    Log,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartArg {
    Train,
    Test,
}

impl From<PartArg> for Part {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Train => Part::Train,
            PartArg::Test => Part::Test,
        }
    }
}

#[derive(Debug, clap::Args)]
struct Filters {
    #[arg(long)]
    split_key: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    encoding: Option<String>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the HTTP API with its worker pool.
    Serve {
        /// Overrides PPM_PORT.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Writes a synthetic XES log with a learnable outcome.
    SynthLog {
        #[arg(long, default_value_t = 300)]
        traces: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uploads an XES file; prints the log record with its statistics.
    UploadLog {
        file: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    Logs,
    LogStats {
        id: String,
    },
    CreateSplit {
        #[arg(long)]
        log_id: String,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, value_enum, default_value_t = Ordering::TemporalStart)]
        ordering: Ordering,
        /// Seed of the random ordering.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file holding a list of filter rules.
        #[arg(long)]
        filters: Option<PathBuf>,
    },
    Splits {
        #[arg(long)]
        log_id: Option<String>,
    },
    /// Submits a training request (JSON file) and, unless told otherwise,
    /// processes the queue until it drains.
    Submit {
        request: PathBuf,
        /// Leave the jobs queued for a later `serve`.
        #[arg(long)]
        no_wait: bool,
        #[arg(long, default_value_t = 3600)]
        timeout_secs: u64,
    },
    Jobs {
        #[arg(long)]
        status: Option<String>,
        #[command(flatten)]
        filters: Filters,
    },
    Job {
        id: String,
    },
    Results {
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        offset: Option<usize>,
        #[command(flatten)]
        filters: Filters,
    },
    /// Comparison view over completed jobs (all when --ids is absent).
    Compare {
        /// Comma-separated job ids.
        #[arg(long)]
        ids: Option<String>,
        #[arg(long)]
        sort: Option<String>,
        #[arg(long)]
        ascending: bool,
        #[arg(long)]
        radar_prefix: Option<usize>,
    },
    /// Results table as CSV.
    Export {
        #[arg(long)]
        ids: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encoded matrix of a model's train or test part as CSV.
    ExportMatrix {
        fingerprint: String,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        part: PartArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Explain {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum)]
        level: LevelArg,
        #[arg(long)]
        trace_id: Option<String>,
        #[arg(long)]
        prefix_length: Option<usize>,
        #[arg(long)]
        feature: Option<String>,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        part: PartArg,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predicts a trace given as a JSON trace document.
    Predict {
        fingerprint: String,
        trace: PathBuf,
        #[arg(long)]
        prefix_length: Option<usize>,
        #[arg(long)]
        explain: bool,
    },
    /// Upload, split, train and compare from one config file.
    RunExperiment {
        config: PathBuf,
        /// Directory for results.csv and comparison.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3600)]
        timeout_secs: u64,
    },
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => emit(text)?,
    }
    Ok(())
}

fn job_filter(status: Option<String>, f: Filters) -> Result<JobFilter> {
    let status = status.map(|s| s.parse::<JobStatus>()).transpose()?;
    Ok(JobFilter { status, split_key: f.split_key, algorithm: f.algorithm, encoding: f.encoding, label: f.label })
}

fn drain(svc: &Service, timeout: Duration) -> Result<()> {
    svc.start_workers();
    let done = svc.wait_idle(timeout);
    svc.shutdown();
    if done {
        Ok(())
    } else {
        Err(Error::Storage(format!("queue did not drain within {}s", timeout.as_secs())))
    }
}

fn serve(svc: Arc<Service>, port: u16) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    svc.start_workers();
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        tracing::info!(addr = %listener.local_addr()?, workers = svc.settings().workers, "listening");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        ppm_workbench::http::serve(svc.clone(), listener, shutdown).await
    })?;
    svc.shutdown();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::from_env()?;
    if let Some(d) = cli.storage_dir {
        settings.storage_dir = d;
    }
    if let Some(d) = cli.cache_dir {
        settings.cache_dir = d;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::invalid("--workers must be positive"));
        }
        settings.workers = n;
    }
    if let Command::SynthLog { traces, seed, out } = &cli.command {
        let log = planted_log(&SynthSpec::new(*traces, *seed));
        std::fs::write(out, serialize_xes(&log))?;
        return print(&serde_json::json!({ "path": out, "traces": log.traces.len(), "log_id": log.id }));
    }
    if let Command::Serve { port: Some(p) } = &cli.command {
        settings.port = *p;
    }
    let svc = Service::open(settings)?;
    match cli.command {
        Command::SynthLog { .. } => unreachable!("handled above"),
        Command::Serve { .. } => {
            let port = svc.settings().port;
            serve(svc, port)
        }
        Command::UploadLog { file, name } => {
            let bytes = std::fs::read(&file).map_err(|e| Error::invalid(format!("{}: {e}", file.display())))?;
            let stem = file.file_stem().and_then(|s| s.to_str()).map(String::from);
            print(&svc.upload_log(&bytes, name.or(stem).as_deref())?)
        }
        Command::Logs => print(&svc.logs()),
        Command::LogStats { id } => print(&svc.log(&id)?.stats),
        Command::CreateSplit { log_id, name, train_fraction, ordering, seed, filters } => {
            let ordering = match ordering {
                Ordering::TemporalStart => TraceOrdering::TemporalStart,
                Ordering::TemporalEnd => TraceOrdering::TemporalEnd,
                Ordering::AsIs => TraceOrdering::AsIs,
                Ordering::Random => TraceOrdering::Random { seed },
            };
            let filters = filters.map(|p| read_json(&p)).transpose()?.unwrap_or_default();
            print(&svc.create_split(&SplitRequest { log_id, name, train_fraction, ordering, filters })?)
        }
        Command::Splits { log_id } => print(&svc.splits(log_id.as_deref())),
        Command::Submit { request, no_wait, timeout_secs } => {
            let req: TrainingRequest = read_json(&request)?;
            let jobs = svc.submit(&req)?;
            if !no_wait {
                drain(&svc, Duration::from_secs(timeout_secs))?;
            }
            let jobs = jobs.iter().map(|j| svc.job(&j.id)).collect::<Result<Vec<_>>>()?;
            let ids: Vec<&str> = jobs.iter().map(|j| j.id.as_str()).collect();
            print(&serde_json::json!({ "job_ids": ids, "jobs": jobs }))
        }
        Command::Jobs { status, filters } => print(&svc.jobs(&job_filter(status, filters)?)),
        Command::Job { id } => print(&svc.job(&id)?),
        Command::Results { limit, offset, filters } => print(&svc.results(&ResultsQuery {
            limit,
            offset,
            split_key: filters.split_key,
            algorithm: filters.algorithm,
            encoding: filters.encoding,
            label: filters.label,
        })),
        Command::Compare { ids, sort, ascending, radar_prefix } => {
            let sort = sort.map(|field| SortKey { field, descending: !ascending });
            print(&svc.comparison(&split_ids(ids.as_deref()), sort.as_ref(), radar_prefix)?)
        }
        Command::Export { ids, out } => write_or_print(out.as_deref(), &svc.export_csv(&split_ids(ids.as_deref()))?),
        Command::ExportMatrix { fingerprint, part, out } => {
            write_or_print(out.as_deref(), &svc.matrix_csv(&fingerprint, part.into())?)
        }
        Command::Explain { model, level, trace_id, prefix_length, feature, part, permutations, seed } => {
            let level = match level {
                LevelArg::Event => ExplanationLevel::Event,
                LevelArg::Trace => ExplanationLevel::Trace,
                LevelArg::Log => ExplanationLevel::Log,
            };
            print(&svc.explain(&ExplanationRequest {
                level,
                model,
                trace_id,
                prefix_length,
                feature,
                part: part.into(),
                permutations,
                seed,
            })?)
        }
        Command::Predict { fingerprint, trace, prefix_length, explain } => {
            let trace: TraceDocument = read_json(&trace)?;
            print(&svc.predict(&fingerprint, &PredictRequest { trace, prefix_length, explain })?)
        }
        Command::RunExperiment { config, out, timeout_secs } => {
            let cfg = ExperimentConfig::load(&config)?;
            svc.start_workers();
            let outcome = run_experiment(&svc, &cfg, Duration::from_secs(timeout_secs));
            svc.shutdown();
            let outcome = outcome?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let ids: Vec<String> = outcome.jobs.iter().map(|j| j.id.clone()).collect();
                let done: Vec<String> = outcome
                    .jobs
                    .iter()
                    .filter(|j| j.status == JobStatus::Completed)
                    .map(|j| j.id.clone())
                    .collect();
                std::fs::write(dir.join("results.csv"), svc.export_csv(&done)?)?;
                std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&outcome.comparison)?)?;
                std::fs::write(dir.join("jobs.json"), serde_json::to_string_pretty(&outcome.jobs)?)?;
                tracing::info!(jobs = ids.len(), dir = %dir.display(), "wrote experiment results");
            }
            print(&serde_json::json!({
                "log_id": outcome.log.id,
                "split_key": outcome.split.spec.split_key,
                "completed": outcome.completed(),
                "jobs": outcome.jobs.iter().map(|j| serde_json::json!({
                    "id": j.id,
                    "status": j.status,
                    "task_identity": j.task_identity,
                    "error": j.error_detail,
                })).collect::<Vec<_>>(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = ApiError { code: e.code().to_string(), message: e.to_string(), detail: None };
            eprintln!("{}", serde_json::to_string_pretty(&err).unwrap_or_else(|_| e.to_string()));
            ExitCode::FAILURE
        }
    }
}
