//! Command line, configuration, evaluation, metrics and reports.

mod config;
mod eval;
pub mod metrics;
mod report;
mod table;

pub use config::{canonical_key, RunConfig, KEYS};
pub use eval::{evaluate, evaluate_policy, evaluate_state, median, EvalRecord};
pub use metrics::{max_scalar_diff, read_metrics, MetricRecord, MetricsSink};
pub use report::{aggregate, emit_report, svg_plot, tag_of, Band, Report, RunSummary};
pub use table::{factorization_table, FactorizationTable};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::env::EnvKind;
use crate::learner::{run_training, LearnerError, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Learner(LearnerError::Config(_)) => 1,
            _ => 2,
        }
    }
}

/// Default run id: `<env>-<algo>-seed<seed>`.
pub fn run_id(cfg: &RunConfig) -> String {
    format!("{}-{}-seed{}", cfg.env.name(), cfg.learner.algo.name(), cfg.learner.seed)
}

/// Trains one configuration and writes `config.toml`, `metrics.jsonl`,
/// `checkpoints/`, a per-run report, and for the matrix game
/// `factorization.{txt,json}` into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let metrics = out.join("metrics.jsonl");
    if metrics.exists() {
        fs::remove_file(&metrics)?;
    }
    let outcome = run_training(&cfg.learner, cfg.env, Some(out), &run_id(cfg))?;
    if cfg.env == EnvKind::Matrix {
        if let Some(table) = outcome.evals.last().and_then(|r| r.table.as_ref()) {
            fs::write(out.join("factorization.txt"), table.to_text())?;
            fs::write(out.join("factorization.json"), serde_json::to_string_pretty(table).map_err(|e| HarnessError::Runtime(e.to_string()))?)?;
        }
    }
    emit_report(&[metrics], &out.join("report"))?;
    Ok(outcome)
}

#[derive(Parser, Debug)]
#[command(name = "lsfsac", about = "Latent-message value factorization with multi-agent soft actor-critic", version)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plot learning curves and summarize final success rates.
    Report {
        /// Metrics files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// matrix | corridor
    #[arg(long)]
    env: Option<String>,
    /// lsf-sac | masac | vdn | qmix
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Env steps to train for.
    #[arg(long)]
    steps: Option<u64>,
    /// Flat TOML config file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $LSFSAC_OUT/<run id>, or runs/<run id>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. --set objective.beta=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Resolves file, then flags, then `--set` overrides.
fn resolve(args: &TrainArgs) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &args.config {
        let text = fs::read_to_string(p).map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", p.display())))?;
        cfg.merge_toml(&text)?;
    }
    for (k, v) in [("env", &args.env), ("algo", &args.algo)] {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if let Some(s) = args.seed {
        cfg.learner.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.learner.max_env_steps = s;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| HarnessError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os("LSFSAC_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(run_id(cfg))
}

/// Entry point of the binary; returns the process exit code
/// (0 success, 1 usage or config error, 2 runtime failure).
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Some(Command::Report { inputs, out }) => emit_report(&inputs, &out).map(|r| {
            println!("{} run(s), {} malformed line(s) skipped, summary at {}", r.runs.len(), r.skipped_lines, out.join("summary.csv").display());
        }),
        None => resolve(&cli.train).and_then(|cfg| {
            let out = cli.train.out.clone().unwrap_or_else(|| default_out(&cfg));
            let outcome = run(&cfg, &out)?;
            if let Some(last) = outcome.evals.last() {
                println!(
                    "{}: {} env steps, success rate {:.3}, median return {:.3}; output in {}",
                    run_id(&cfg),
                    last.env_step,
                    last.success_rate,
                    last.median_return,
                    out.display()
                );
                if let Some(t) = &last.table {
                    print!("{}", t.to_text());
                }
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 1 {
                eprintln!("run with --help for usage");
            }
            e.exit_code()
        }
    }
}
