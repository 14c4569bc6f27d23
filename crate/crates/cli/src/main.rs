//! `adasup`: batch runs, evaluation and comparison against the core library,
//! plus `serve` and a handful of client commands for the live service.
//!
//! Exit codes: 0 success, 1 user error, 2 internal error.

mod api;
mod batch;

use std::path::PathBuf;
use std::process::ExitCode;

use adasup_client::ClientError;
use adasup_core::config::{self, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] adasup_core::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let user = match self {
            CliError::Core(e) => e.is_user_error(),
            CliError::Client(e) => e.status().is_none_or(|s| s < 500),
            CliError::Usage(_) => true,
            CliError::Internal(_) => false,
        };
        if user {
            1
        } else {
            2
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "adasup", version, about = "Adaptive-supervision active learning for object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where a run's configuration comes from. Without either flag the built-in
/// defaults apply.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset: voc2007, voc2012, wheat or desk.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set seed=3 --set variant=hard`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(path), _) => config::parse_config(path)?,
            (None, Some(name)) => config::preset(name).ok_or_else(|| {
                let known: Vec<&str> = config::PRESETS.iter().map(|(n, _)| *n).collect();
                CliError::Usage(format!("unknown preset {name:?}; known: {}", known.join(", ")))
            })?,
            (None, None) => RunConfig::default(),
        };
        let overrides = self
            .overrides
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                    .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if overrides.is_empty() {
            Ok(base)
        } else {
            Ok(base.with_overrides(&overrides)?)
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a config to completion with the simulated oracle.
    Run(batch::RunArgs),
    /// Continue a run from its checkpoint.
    Resume(batch::ResumeArgs),
    /// Serve the HTTP API, driving the loop from the live queue or the simulated oracle.
    Serve(api::ServeArgs),
    /// Score a predictions file against ground truth.
    Eval(batch::EvalArgs),
    /// Write a synthetic dataset snapshot.
    GenDataset(batch::GenArgs),
    /// Hours-to-target table across result directories.
    Compare(batch::CompareArgs),
    /// Show the service status.
    Status(api::UrlArgs),
    /// Take the next open annotation ticket.
    Next(api::UrlArgs),
    /// Answer a weak ticket with clicks.
    SubmitClicks(api::ClicksArgs),
    /// Answer a strong ticket with boxes.
    SubmitBoxes(api::BoxesArgs),
    /// Print the service's hours/mAP series.
    Series(api::UrlArgs),
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(a) => batch::run(a),
        Command::Resume(a) => batch::resume(a),
        Command::Serve(a) => api::serve(a),
        Command::Eval(a) => batch::eval(a),
        Command::GenDataset(a) => batch::gen_dataset(a),
        Command::Compare(a) => batch::compare(a),
        Command::Status(a) => api::status(a),
        Command::Next(a) => api::next(a),
        Command::SubmitClicks(a) => api::submit_clicks(a),
        Command::SubmitBoxes(a) => api::submit_boxes(a),
        Command::Series(a) => api::series(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
