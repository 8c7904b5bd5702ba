//! `ecb`: run the evaluation pipeline or the survey service.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ecb_core::report::{
    emit_report, load_cluster_models, save_cluster_models, Pipeline, PipelineError, ReportFormat, RunArtifacts,
    RunConfig, Stage,
};
use ecb_survey::{tasks_from_records, ServiceConfig, SurveyService, TaskDefinition};

#[derive(Debug, Parser)]
#[command(name = "ecb", version, about = "Cultural-bias evaluation engine")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "ECB_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory for reports and tables.
    #[arg(long, global = true, env = "ECB_OUT", default_value = "ecb-out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "ECB_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "ECB_JOBS")]
    jobs: Option<usize>,
    /// markdown, csv or json.
    #[arg(long, global = true, env = "ECB_FORMAT", default_value = "markdown")]
    format: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate inputs.
    Ingest,
    /// Fit latent modes per model and save them as `.ecm` files under `--out/models`.
    Modes,
    /// Country proximity with bootstrap intervals.
    Proximity {
        /// Reuse cluster models from a previous `modes` run.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Traditional/modern leaning with permutation tests.
    Leaning,
    /// Culture-aware answer scoring and metric/human agreement.
    Cultscore,
    /// Human quality scores and rater quality control.
    Humaneval,
    /// Trajectories, correlations, saturation and demographics.
    Analytics,
    /// Every stage in order.
    Report,
    /// Start the survey HTTP service.
    Serve {
        #[arg(long, env = "ECB_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
        /// Task definitions as JSON lines; derived from the manifest when omitted.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Append-only event log.
        #[arg(long, env = "ECB_STORE", default_value = "survey-log.jsonl")]
        store: PathBuf,
        #[arg(long, env = "ECB_ADMIN_TOKEN", hide_env_values = true)]
        admin_token: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Pipeline(PipelineError),
    /// Validation failed; the report was still written.
    Fatal,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Fatal) => ExitCode::from(1),
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| PipelineError::missing(Stage::Config, "--config (or ECB_CONFIG) is required"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    Ok(config)
}

fn init_threads(jobs: usize) {
    if jobs > 0 {
        // ignore "already initialized" when embedded in a host that set up rayon itself
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

fn emit(artifacts: &RunArtifacts, cli: &Cli) -> Result<(), PipelineError> {
    let written = emit_report(artifacts, cli.format, &cli.out)
        .map_err(|e| PipelineError::internal(Stage::Emit, format!("{}: {e}", cli.out.display())))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { addr, tasks, store, admin_token } = &cli.command {
        return serve(&cli, addr, tasks.as_deref(), store, admin_token.clone()).map_err(Failure::from);
    }
    let config = load_config(&cli)?;
    init_threads(config.jobs);
    let pipeline = Pipeline::load(config)?;
    let mut artifacts = pipeline.artifacts();
    for f in pipeline.validation.findings.iter().filter(|f| f.severity == ecb_core::corpus::Severity::Fatal).take(20) {
        eprintln!("fatal {} {}: {}", f.code, f.subject, f.message);
    }
    if pipeline.validation.has_fatal() {
        emit(&artifacts, &cli)?;
        return Err(Failure::Fatal);
    }

    match &cli.command {
        Command::Ingest => {}
        Command::Modes => {
            let (models, section) = pipeline.modes()?;
            for p in save_cluster_models(&models, &cli.out.join("models"))? {
                println!("{}", p.display());
            }
            artifacts.modes = Some(section);
        }
        Command::Proximity { models } => {
            let models = match models {
                Some(dir) => load_cluster_models(dir)?,
                None => {
                    let (models, section) = pipeline.modes()?;
                    artifacts.modes = Some(section);
                    models
                }
            };
            artifacts.proximity = Some(pipeline.proximity(&models)?);
        }
        Command::Leaning => artifacts.leaning = Some(pipeline.leaning()?),
        Command::Cultscore => artifacts.cultscore = Some(pipeline.cultscore()),
        Command::Humaneval => artifacts.humaneval = Some(pipeline.humaneval()),
        Command::Analytics => artifacts.analytics = Some(pipeline.analytics()),
        Command::Report => {
            let (models, section) = pipeline.modes()?;
            artifacts.modes = Some(section);
            artifacts.proximity = Some(pipeline.proximity(&models)?);
            artifacts.leaning = Some(pipeline.leaning()?);
            artifacts.cultscore = Some(pipeline.cultscore());
            artifacts.humaneval = Some(pipeline.humaneval());
            artifacts.analytics = Some(pipeline.analytics());
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    emit(&artifacts, &cli)?;
    Ok(())
}

fn survey_tasks(cli: &Cli, tasks: Option<&Path>) -> Result<(Vec<TaskDefinition>, Option<RunConfig>), PipelineError> {
    let config = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let defs = match (tasks, &config) {
        (Some(path), _) => read_task_file(path)?,
        (None, Some(c)) => {
            let pipeline = Pipeline::load(c.clone())?;
            tasks_from_records(&pipeline.inputs.records, &pipeline.inputs.gold_items)
        }
        (None, None) => return Err(PipelineError::missing(Stage::Config, "serve needs --tasks or --config")),
    };
    Ok((defs, config))
}

fn read_task_file(path: &Path) -> Result<Vec<TaskDefinition>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::missing(Stage::Config, format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::invalid(Stage::Config, format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn serve(cli: &Cli, addr: &str, tasks: Option<&Path>, store: &Path, admin_token: Option<String>) -> Result<(), PipelineError> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let (defs, config) = survey_tasks(cli, tasks)?;
    let service_config = ServiceConfig {
        seed: cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0),
        admin_token,
        qc: config.as_ref().map(|c| c.qc).unwrap_or_default(),
        ..Default::default()
    };
    let service = SurveyService::open(service_config, defs, Some(store)).map_err(|e| {
        let message = e.to_string();
        match e.code() {
            "invalid_tasks" | "replay_mismatch" => PipelineError::invalid(Stage::Config, message),
            _ => PipelineError::internal(Stage::Config, message),
        }
    })?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| PipelineError::internal(Stage::Config, e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| PipelineError::internal(Stage::Config, format!("bind {addr}: {e}")))?;
        ecb_survey::serve(listener, Arc::new(service))
            .await
            .map_err(|e| PipelineError::internal(Stage::Config, e.to_string()))
    })
}
