//! `ambient` command-line tool: simulate, replay, evaluate, agree, stats
//! and serve.
//!
//! Exit codes: 0 on success, 1 when a command fails or a threshold given
//! on the command line is missed, 2 on a usage error.

pub mod http_backend;
pub mod service;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ambient_core::evaluation::{
    dataset_stats, evaluate, gold_labels, interrun_agreement, load_benchmark, predicted_labels, replay_stateless_all,
    report, run_live_all, save_dataset, EvalReport, FormatError, LengthMismatch, ProtocolError,
};
use ambient_core::prompts::PromptError;
use ambient_core::simulator::{run_simulation, ScriptedSga, SimulationConfig};
use ambient_core::toolbox::{load_backlog, load_roster};
use ambient_core::{
    BackendHandle, Classifier, Dialogue, EngineConfig, PromptPack, RuleSet, Task, TeamMember, ToolError,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::http_backend::HttpBackend;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Length(#[from] LengthMismatch),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("threshold not met: {0}")]
    Threshold(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Deterministic rules; no network.
    Rule,
    /// Chat-completions endpoint from AMBIENT_LLM_ENDPOINT / _MODEL / _API_KEY.
    Http,
}

#[derive(Debug, Parser)]
#[command(name = "ambient", version, about = "Ambient project-management agent")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Rule, global = true)]
    pub backend: BackendKind,
    /// Team roster: JSON list of {display_name, handle, role}.
    #[arg(long, global = true)]
    pub roster: Option<PathBuf>,
    /// Backlog seed: JSON list of tasks.
    #[arg(long, global = true)]
    pub backlog: Option<PathBuf>,
    /// Directory of prompt overrides (`root.txt`, `classifier.txt`, ...).
    #[arg(long, global = true)]
    pub prompts_dir: Option<PathBuf>,
    /// Rule-backend configuration (JSON).
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
    /// Output file (`.jsonl`) or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log verbosity on stderr: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate dialogues by letting a simulated team talk to the agent.
    Simulate(SimulateArgs),
    /// Run the agent over a recorded dataset.
    Replay(ReplayArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Multiset agreement between two prediction (or annotation) files.
    Agree(AgreeArgs),
    /// Dataset shape and label supports.
    Stats(StatsArgs),
    /// Start the HTTP/SSE service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 8)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 20)]
    pub turns: usize,
    /// Seed for the scripted generator.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Thresholds {
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    #[arg(long)]
    pub min_f1: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("protocol").required(true).args(["stateless", "live"])))]
pub struct ReplayArgs {
    pub dataset: PathBuf,
    /// Fresh engine per turn, fed the recorded transcript.
    #[arg(long)]
    pub stateless: bool,
    /// One engine for the whole dialogue.
    #[arg(long)]
    pub live: bool,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub ground_truth: PathBuf,
    pub predictions: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub addr: String,
    /// Channels opened at startup.
    #[arg(long = "channel", default_values_t = vec!["general".to_string()])]
    pub channels: Vec<String>,
    /// Bearer token required on channel routes.
    #[arg(long, env = "AMBIENT_SERVICE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.global.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => simulate(g, a),
        Command::Replay(a) => replay(g, a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Agree(a) => agree(a),
        Command::Stats(a) => stats(a),
        Command::Serve(a) => serve(g, a),
    }
}

fn http_handle() -> Result<BackendHandle, CliError> {
    let backend = HttpBackend::from_env().map_err(CliError::Config)?;
    Ok(BackendHandle::from_backend(backend))
}

pub fn engine_config(g: &GlobalArgs) -> Result<EngineConfig, CliError> {
    let mut config = match g.backend {
        BackendKind::Rule => EngineConfig::default(),
        BackendKind::Http => EngineConfig::with_backend(http_handle()?),
    };
    if let Some(dir) = &g.prompts_dir {
        config.prompts = PromptPack::load_dir(dir)?;
    }
    if let Some(path) = &g.rules {
        if g.backend != BackendKind::Rule {
            return Err(CliError::Config("--rules only applies to --backend rule".into()));
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let rules: RuleSet =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.classifier = Classifier::Rules(rules);
    }
    Ok(config)
}

fn seed(g: &GlobalArgs) -> Result<(Vec<TeamMember>, Vec<Task>), CliError> {
    let team = match &g.roster {
        Some(p) => load_roster(p)?,
        None => Vec::new(),
    };
    let backlog = match &g.backlog {
        Some(p) => load_backlog(p)?,
        None => Vec::new(),
    };
    Ok((team, backlog))
}

fn simulate(g: &GlobalArgs, a: &SimulateArgs) -> Result<(), CliError> {
    let (team, backlog) = seed(g)?;
    if team.is_empty() {
        return Err(CliError::Config("simulate needs a non-empty --roster".into()));
    }
    let engine = engine_config(g)?;
    let config = SimulationConfig {
        n_dialogues: a.dialogues,
        turns_per_dialogue: a.turns,
        team: team.clone(),
        backlog: backlog.clone(),
        prompts: engine.prompts.clone(),
        seed: a.seed,
        ..SimulationConfig::default()
    };
    let http = match g.backend {
        BackendKind::Http => Some(http_handle()?),
        BackendKind::Rule => None,
    };
    let factory = |i: usize| match &http {
        Some(h) => h.clone(),
        None => BackendHandle::from_backend(ScriptedSga::new(&team, &backlog, a.seed + i as u64)),
    };
    let out = run_simulation(&config, &engine, &factory)?;
    let dest = g.out.clone().unwrap_or_else(|| PathBuf::from("simulated"));
    let files = save_dataset(&dest, &out.dialogues).map_err(io_err(&dest))?;
    let audit_path = audit_path(&dest);
    let mut audit = Vec::new();
    for entry in &out.audit {
        serde_json::to_writer(&mut audit, entry).expect("audit entry serializes");
        audit.push(b'\n');
    }
    fs::write(&audit_path, audit).map_err(io_err(&audit_path))?;
    let turns: usize = out.dialogues.iter().map(|d| d.turns.len()).sum();
    println!(
        "wrote {} dialogues ({} turns) in {} file(s) under {}",
        out.dialogues.len(),
        turns,
        files.len(),
        dest.display()
    );
    println!("prompt audit: {}", audit_path.display());
    for d in &out.aborted {
        println!("aborted {} after {} turns: {}", d.id, d.turns_completed, d.reason);
    }
    if out.dialogues.is_empty() && a.dialogues > 0 {
        return Err(CliError::Config("every dialogue aborted".into()));
    }
    Ok(())
}

/// Where `simulate` puts the prompt log: next to a `.jsonl` output, or
/// inside an output directory. Never `.jsonl`, so the dataset loader
/// skips it.
pub fn audit_path(dest: &Path) -> PathBuf {
    if dest.extension().is_some_and(|e| e == "jsonl") {
        dest.with_extension("audit.log")
    } else {
        dest.join("prompt_audit.log")
    }
}

fn check_thresholds(report: &EvalReport, t: &Thresholds) -> Result<(), CliError> {
    let mut missed = Vec::new();
    if let Some(min) = t.min_accuracy.filter(|m| report.exact_match_accuracy < *m) {
        missed.push(format!("exact-match {:.3} < {min}", report.exact_match_accuracy));
    }
    if let Some(min) = t.min_f1.filter(|m| report.multiset_f1 < *m) {
        missed.push(format!("multiset F1 {:.3} < {min}", report.multiset_f1));
    }
    if missed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(missed.join(", ")))
    }
}

fn print_report(report: &EvalReport, json: bool) {
    let mut out = std::io::stdout().lock();
    let _ = if json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(report).expect("report serializes")
        )
    } else {
        write!(out, "{}", report::render_report(report))
    };
}

fn replay(g: &GlobalArgs, a: &ReplayArgs) -> Result<(), CliError> {
    let config = engine_config(g)?;
    let source = load_benchmark(&a.dataset)?;
    let replayed: Vec<Dialogue> = if a.stateless {
        replay_stateless_all(&config, &source)
    } else {
        run_live_all(&config, &source)?
    };
    if let Some(dest) = &g.out {
        save_dataset(dest, &replayed).map_err(io_err(dest))?;
        eprintln!("predictions written to {}", dest.display());
    }
    let labelled = replayed
        .iter()
        .all(|d| d.turns.iter().all(|t| t.ground_truth.is_some()));
    if !labelled {
        println!("dataset has unlabelled turns; no report");
        if a.thresholds.min_accuracy.is_some() || a.thresholds.min_f1.is_some() {
            return Err(CliError::Config("thresholds need ground truth on every turn".into()));
        }
        return Ok(());
    }
    let gold = gold_labels(&replayed)?;
    let pred: Vec<_> = replayed
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.predicted.clone().unwrap_or_default()))
        .collect();
    let report = evaluate(&gold, &pred)?;
    print_report(&report, a.json);
    check_thresholds(&report, &a.thresholds)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let gold = gold_labels(&load_benchmark(&a.ground_truth)?)?;
    let pred = predicted_labels(&load_benchmark(&a.predictions)?)?;
    let report = evaluate(&gold, &pred)?;
    print_report(&report, a.json);
    check_thresholds(&report, &a.thresholds)
}

fn agree(a: &AgreeArgs) -> Result<(), CliError> {
    let first = predicted_labels(&load_benchmark(&a.first)?)?;
    let second = predicted_labels(&load_benchmark(&a.second)?)?;
    let score = interrun_agreement(&first, &second)?;
    if a.json {
        println!("{}", serde_json::json!({"agreement": score, "n_turns": first.len()}));
    } else {
        println!("multiset agreement: {score:.3} over {} turns", first.len());
    }
    match a.min {
        Some(min) if score < min => Err(CliError::Threshold(format!("agreement {score:.3} < {min}"))),
        _ => Ok(()),
    }
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let s = dataset_stats(&load_benchmark(&a.dataset)?);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
    } else {
        print!("{}", report::render_stats(&s));
    }
    Ok(())
}

fn serve(g: &GlobalArgs, a: &ServeArgs) -> Result<(), CliError> {
    let config = engine_config(g)?;
    let (team, backlog) = seed(g)?;
    let app = service::AppState::new(config, team, backlog).with_token(a.token.clone());
    for ch in &a.channels {
        app.open_channel(ch)
            .map_err(|e| CliError::Config(format!("channel `{ch}`: {e:?}")))?;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| CliError::Config(format!("bind {}: {e}", a.addr)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?;
        println!("listening on http://{addr}/v1");
        let _ = std::io::stdout().flush();
        service::serve(listener, Arc::new(app))
            .await
            .map_err(|e| CliError::Config(e.to_string()))
    })
}
