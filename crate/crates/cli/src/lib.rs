//! Command implementations behind the `framevote` binary.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 dataset or world
//! schema error, 4 transport failure, 5 backend or protocol failure,
//! 1 anything else. Failures also print a one-line JSON summary to stderr.

use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use framevote_core::config::{BackendKind, ConfigError, RunConfig};
use framevote_core::eval::{self, run_dataset, Clients, EvalError, QaItem, RunReport, SweepAxis, SweepTable};
use framevote_core::http::HttpBackend;
use framevote_core::prompts::PromptSet;
use framevote_core::sim::{SimBackend, SimError, SimServer, World};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Transport(_) => 4,
            CliError::Backend(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Schema(_) => "schema",
            CliError::Transport(_) => "transport",
            CliError::Backend(_) => "backend",
            CliError::Other(_) => "other",
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Server(_) => CliError::Other(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::Io(_) => CliError::Other(msg),
            EvalError::Schema(_) | EvalError::Empty(_) => CliError::Schema(msg),
            EvalError::Config(_) => CliError::Config(msg),
            EvalError::Transport(_) => CliError::Transport(msg),
            EvalError::Backend(_) | EvalError::Protocol(_) => CliError::Backend(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "framevote",
    version,
    about = "Frame-sampling self-reward selection for video multiple-choice QA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a dataset and write report.json and summary.csv.
    Run(RunArgs),
    /// Evaluate a dataset once per value of one parameter.
    Sweep(SweepArgs),
    /// Serve a simulated world over HTTP.
    Simserve(SimserveArgs),
    /// Expand a world recipe into a world file and a matching dataset.
    GenWorld(GenWorldArgs),
}

/// Options shared by `run` and `sweep`; each overrides the config key of the same name.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSONL dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the simulated backend over this world or recipe file.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Validate config and dataset without calling any backend.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// alpha, beta, frames, n_samples, confidence_variant or components.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimserveArgs {
    /// World or recipe file.
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Request-handling threads.
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GenWorldArgs {
    /// World or recipe file.
    #[arg(long)]
    pub world: PathBuf,
    /// Directory for world.json and dataset.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

/// Loads the config and applies flag overrides.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = common.workers {
        cfg.run.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(world) = &common.world {
        cfg.backend.kind = BackendKind::Sim;
        cfg.backend.world = Some(world.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_prompts(cfg: &RunConfig) -> Result<PromptSet, CliError> {
    match &cfg.prompts.dir {
        Some(dir) => PromptSet::from_dir(dir).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(PromptSet::builtin()),
    }
}

fn load_items(path: &Path) -> Result<Vec<QaItem>, CliError> {
    eval::load_dataset(path).map(|d| d.items).map_err(|e| match e {
        EvalError::Io(m) => CliError::Usage(format!("cannot read dataset {m}")),
        other => other.into(),
    })
}

/// The backends a run talks to.
pub enum Backends {
    Sim(SimBackend),
    Http { video: HttpBackend, text: HttpBackend },
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        match cfg.backend.kind {
            BackendKind::Sim => {
                let path = cfg.backend.world.as_ref().expect("validated: sim needs a world");
                Ok(Backends::Sim(SimBackend::new(Arc::new(World::load(path)?))))
            }
            BackendKind::Http => Ok(Backends::Http {
                video: HttpBackend::new(&cfg.backend.video_endpoint, &cfg.backend),
                text: HttpBackend::new(&cfg.backend.text_endpoint, &cfg.backend),
            }),
        }
    }

    pub fn clients(&self) -> Clients<'_> {
        match self {
            Backends::Sim(sim) => Clients { video: sim, text: sim },
            Backends::Http { video, text } => Clients { video, text },
        }
    }

    /// Checks that the simulated world knows every video in the dataset.
    fn check_items(&self, items: &[QaItem]) -> Result<(), CliError> {
        if let Backends::Sim(sim) = self {
            for item in items {
                let known = sim
                    .world()
                    .video(&item.video.video_id)
                    .is_some_and(|v| v.n_frames == item.video.n_frames);
                if !known {
                    return Err(CliError::Schema(format!(
                        "question {}: video {:?} with {} frames is not in the world",
                        item.id, item.video.video_id, item.video.n_frames
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum RunOutcome {
    DryRun { questions: usize },
    Report(Box<RunReport>),
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome, CliError> {
    let c = &args.common;
    let cfg = resolve_config(c)?;
    let prompts = load_prompts(&cfg)?;
    let items = load_items(&c.dataset)?;
    let backends = Backends::from_config(&cfg)?;
    backends.check_items(&items)?;
    if c.dry_run {
        return Ok(RunOutcome::DryRun { questions: items.len() });
    }
    let report = run_dataset(&items, &cfg, &prompts, backends.clients())?;
    report.write(&c.out)?;
    Ok(RunOutcome::Report(Box::new(report)))
}

fn slug(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `sweep.csv` plus one report directory per value.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Option<SweepTable>, CliError> {
    let axis: SweepAxis = args
        .axis
        .parse()
        .map_err(|e: EvalError| CliError::Usage(e.to_string()))?;
    let c = &args.common;
    let cfg = resolve_config(c)?;
    for v in &args.values {
        axis.apply(&cfg, v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let prompts = load_prompts(&cfg)?;
    let items = load_items(&c.dataset)?;
    let backends = Backends::from_config(&cfg)?;
    backends.check_items(&items)?;
    if c.dry_run {
        return Ok(None);
    }
    let (table, reports) = eval::sweep(&cfg, axis, &args.values, &items, &prompts, backends.clients())?;
    for (point, report) in table.points.iter().zip(&reports) {
        report.write(&c.out.join(format!("{axis}={}", slug(&point.value))))?;
    }
    std::fs::write(c.out.join("sweep.csv"), table.to_csv())
        .map_err(|e| CliError::Other(format!("{}: {e}", c.out.display())))?;
    Ok(Some(table))
}

pub fn cmd_simserve(args: &SimserveArgs) -> Result<(), CliError> {
    let world = Arc::new(World::load(&args.world)?);
    let server = SimServer::start(world, &format!("{}:{}", args.host, args.port), args.workers)?;
    println!("{}", serde_json::json!({ "listening": server.url() }));
    let mut last = 0;
    loop {
        std::thread::sleep(Duration::from_secs(10));
        let stats = server.stats();
        let (v, t) = (
            stats.video_qa.load(Ordering::Relaxed),
            stats.text_lm.load(Ordering::Relaxed),
        );
        if v + t != last {
            last = v + t;
            log::info!(
                "served {v} video_qa and {t} text_lm requests ({} errors)",
                stats.errors.load(Ordering::Relaxed)
            );
        }
    }
}

pub fn cmd_gen_world(args: &GenWorldArgs) -> Result<World, CliError> {
    let world = World::load(&args.world)?;
    let io = |e: std::io::Error| CliError::Other(format!("{}: {e}", args.out.display()));
    std::fs::create_dir_all(&args.out).map_err(io)?;
    std::fs::write(args.out.join("world.json"), world.to_json_string()).map_err(io)?;
    std::fs::write(args.out.join("dataset.jsonl"), world.dataset_jsonl()).map_err(io)?;
    Ok(world)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|outcome| match outcome {
            RunOutcome::DryRun { questions } => {
                println!("{}", serde_json::json!({ "dry_run": true, "questions": questions }));
            }
            RunOutcome::Report(r) => {
                println!(
                    "{}",
                    serde_json::to_string(&r.aggregates).expect("aggregates serialize")
                );
            }
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|table| {
            if let Some(t) = table {
                print!("{}", t.to_csv());
            }
        }),
        Command::Simserve(a) => cmd_simserve(a),
        Command::GenWorld(a) => cmd_gen_world(a).map(|w| {
            println!(
                "{}",
                serde_json::json!({ "videos": w.videos.len(), "questions": w.questions.len() })
            );
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.summary_json());
            e.exit_code()
        }
    }
}
