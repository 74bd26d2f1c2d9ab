//! Command-line driver: runs searches and baselines from a config file and
//! writes frontier, cost, and model artifacts.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use decnas_core::coordinator::{fl_tune, test_accuracy};
use decnas_core::nn::Model;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "decnas", version, about = "Federated architecture search simulator")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file; built-in defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain, search down the budget schedule, and fine-tune frontier models.
    RunSearch(Common),
    /// Train width-multiplier baselines from scratch and add them to frontier.csv.
    RunBaseline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated factors in (0, 1]; defaults to the factor matching
        /// the smallest searched model in the output directory.
        #[arg(long, value_delimiter = ',')]
        factors: Vec<f64>,
    },
    /// FedAvg-tune a saved model and report its test accuracy.
    FlTune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Overrides `fl_tune.rounds`.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Summarize a run directory and draw frontier.svg.
    Report {
        /// Run directory (defaults to `--out`, then `run`).
        dir: Option<PathBuf>,
        /// Same as DIR, for symmetry with the other subcommands.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible budget: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Infeasible(_) => 3,
            Self::Other(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        if let Some(c) = e.downcast_ref::<ConfigError>() {
            return Self::Config(c.0.clone());
        }
        match e.downcast_ref::<decnas_core::Error>() {
            Some(decnas_core::Error::BudgetInfeasible(m)) => Self::Infeasible(m.clone()),
            Some(decnas_core::Error::InvalidArgument(m)) => Self::Config(m.clone()),
            _ => Self::Other(e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &common.out {
        config.run.out = out.clone();
    }
    Ok(config)
}

pub fn run(cli: Cli, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    match cli.command {
        Command::RunSearch(common) => {
            let config = load_config(&common)?;
            let run = pipeline::search(&config)?;
            let paths = output::write_search(&config.run.out, &config, &run)?;
            writeln!(stdout, "wrote {} files to {}", paths.len(), config.run.out.display()).map_err(anyhow::Error::from)?;
        }
        Command::RunBaseline { common, factors } => {
            let config = load_config(&common)?;
            let factors = if factors.is_empty() {
                vec![default_factor(&config)?]
            } else {
                factors
            };
            if let Some(f) = factors.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(CliError::Config(format!("width factor must be in (0, 1], got {f}")));
            }
            let rows = pipeline::baseline(&config, &factors)?;
            output::append_frontier(&config.run.out, rows)?;
            writeln!(stdout, "added {} baseline rows to {}", factors.len(), config.run.out.join(output::FRONTIER_FILE).display())
                .map_err(anyhow::Error::from)?;
        }
        Command::FlTune { common, model, rounds } => {
            let mut config = load_config(&common)?;
            if let Some(r) = rounds {
                config.fl_tune.rounds = r;
            }
            config.validate()?;
            tune_saved(&config, &model, stdout)?;
        }
        Command::Report { dir, out } => {
            let dir = dir.or(out).unwrap_or_else(|| PathBuf::from("run"));
            report::report(&dir, stdout)?;
        }
    }
    Ok(())
}

fn tune_saved(config: &RunConfig, path: &std::path::Path, stdout: &mut impl std::io::Write) -> anyhow::Result<()> {
    let text = std::fs::read(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let model: Model = serde_json::from_slice(&text)?;
    let federation = pipeline::build_federation(config)?;
    let tuned = fl_tune(&model, &federation, &config.final_tune_config(0))?;
    let acc = test_accuracy(&tuned, &federation)?;
    std::fs::create_dir_all(&config.run.out)?;
    let out = config.run.out.join("tuned.json");
    std::fs::write(&out, serde_json::to_vec(&tuned)?)?;
    writeln!(stdout, "{} MACs, test accuracy {acc:.6}, wrote {}", tuned.macs(), out.display())?;
    Ok(())
}

fn default_factor(config: &RunConfig) -> anyhow::Result<f64> {
    let path = config.run.out.join(output::FRONTIER_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("{}: {e} (run run-search first or pass --factors)", path.display()))?;
    let rows = output::parse_frontier(&text)?;
    let target = rows
        .iter()
        .filter(|r| r.method != "width_multiplier")
        .map(|r| r.macs)
        .min()
        .ok_or_else(|| anyhow::anyhow!("{} has no searched rows; pass --factors", path.display()))?;
    pipeline::matched_factor(&config.architecture()?, target)
        .ok_or_else(|| anyhow::anyhow!("no width factor reaches {target} MACs"))
}
