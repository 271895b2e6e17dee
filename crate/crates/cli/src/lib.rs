//! `exitrack` command-line driver.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod cmd;
pub mod config;
pub mod plot;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    exitrack_net::NetError,
    exitrack_core::dataset::DatasetError,
    exitrack_core::synthetic::SceneError,
    exitrack_core::metrics::MetricsError,
    exitrack_core::ood::OodError,
    exitrack_core::tasksim::TaskError,
    exitrack_core::kv::KvError
);

fn parse_setting(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Parser)]
#[command(
    name = "exitrack",
    version,
    about = "Exit-aware single-object tracking on synthetic conveyor scenes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key=value config file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Extra setting, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_setting)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a train/val/test dataset of synthetic conveyor sequences.
    Gen(GenArgs),
    /// Train the tracker and write a checkpoint.
    Train(TrainArgs),
    /// Choose the perturbation size and exit threshold on validation data.
    Calibrate(CalibrateArgs),
    /// Evaluate box quality and exit prediction on a split.
    Eval(EvalArgs),
    /// Run pick-and-place episodes gated by exit flags.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub n_train: Option<String>,
    #[arg(long)]
    pub n_val: Option<String>,
    #[arg(long)]
    pub n_test: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root with train/ and val/.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, value_parser = ["joint", "two-stage"])]
    pub train_mode: Option<String>,
    #[arg(long, value_parser = ["backbone", "encoder", "similarity", "target-query"])]
    pub ood_input: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub samples_per_epoch: Option<String>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Dataset root with val/.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub phi_quantile: Option<String>,
    #[arg(long, value_parser = ["max_h", "g"])]
    pub score_variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Exit-signal sources, comma separated: oracle, ood, none.
    #[arg(long)]
    pub flags: Option<String>,
}

fn overrides(common: &Common, named: &[(&str, &Option<String>)]) -> Vec<(String, String)> {
    let mut v = common.set.clone();
    for (k, val) in named {
        if let Some(s) = val {
            v.push((k.to_string(), s.clone()));
        }
    }
    v
}

fn load(
    common: &Common,
    named: &[(&str, &Option<String>)],
    allowed: &[&str],
) -> Result<RunConfig, CliError> {
    RunConfig::load(common.config.as_deref(), &overrides(common, named), allowed)
}

/// Runs one command; returns the text printed on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Gen(a) => {
            let named = [
                ("out", &a.out),
                ("seed", &a.seed),
                ("n_train", &a.n_train),
                ("n_val", &a.n_val),
                ("n_test", &a.n_test),
            ];
            cmd::gen::run(load(&a.common, &named, cmd::gen::KEYS)?)
        }
        Command::Train(a) => {
            let named = [
                ("data", &a.data),
                ("out", &a.out),
                ("train_mode", &a.train_mode),
                ("ood_input", &a.ood_input),
                ("epochs", &a.epochs),
                ("samples_per_epoch", &a.samples_per_epoch),
            ];
            cmd::train::run(load(&a.common, &named, cmd::train::KEYS)?)
        }
        Command::Calibrate(a) => {
            let named = [
                ("checkpoint", &a.checkpoint),
                ("data", &a.data),
                ("phi_quantile", &a.phi_quantile),
                ("score_variant", &a.score_variant),
            ];
            cmd::calibrate::run(load(&a.common, &named, cmd::calibrate::KEYS)?)
        }
        Command::Eval(a) => {
            let named = [
                ("checkpoint", &a.checkpoint),
                ("data", &a.data),
                ("out", &a.out),
            ];
            cmd::eval::run(load(&a.common, &named, cmd::eval::KEYS)?)
        }
        Command::Simulate(a) => {
            let named = [
                ("checkpoint", &a.checkpoint),
                ("data", &a.data),
                ("out", &a.out),
                ("flags", &a.flags),
            ];
            cmd::simulate::run(load(&a.common, &named, cmd::simulate::KEYS)?)
        }
    }
}
