//! Commands that run against the core library in-process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adasup_core::checkpoint::{self, Journal};
use adasup_core::data::{DatasetModel, ImageId, ImageRecord};
use adasup_core::detector::Prediction;
use adasup_core::evaluator::{evaluate, ApProtocol, EvalOptions};
use adasup_core::results::{self, SeriesPoint};
use adasup_core::voc::{ingest_voc_annotations, CategoryPolicy};
use adasup_core::RunResult;
use clap::{Args, ValueEnum};

use crate::{CliError, ConfigArgs, Result};

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for results, ledger, series, metadata and the checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ResumeArgs {
    /// Checkpoint written by `run` or `serve`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    #[value(name = "11point")]
    ElevenPoint,
    Allpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Eval,
}

#[derive(Args)]
pub struct EvalArgs {
    /// JSON object mapping image id to a list of `{"box": {...}, "scores": [...]}`.
    #[arg(long)]
    predictions: PathBuf,
    /// A dataset snapshot (JSON file) or a directory of VOC XML annotations.
    #[arg(long)]
    truth: PathBuf,
    /// Which images of the truth set to score.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitChoice,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value = "11point")]
    protocol: Protocol,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Snapshot file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Defaults to the first run's final mAP minus 0.02.
    #[arg(long)]
    target_map: Option<f64>,
    /// Result directories; savings are relative to the first.
    #[arg(required = true, num_args = 1..)]
    dirs: Vec<PathBuf>,
}

fn report(result: &RunResult, out: &Path) -> Result<()> {
    let files = results::emit_results(result, out)?;
    println!(
        "{} episodes, stopped: {:?}, {:.2} h charged, final mAP {:.4}",
        result.episodes.len(),
        result.stop_reason,
        result.ledger.cumulative().seconds() / 3600.0,
        result.final_report.map
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

pub fn run(args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let journal = Journal::in_dir(&args.out)?;
    let result = adasup_core::simulate(&cfg, &journal)?;
    report(&result, &args.out)
}

pub fn resume(args: ResumeArgs) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let out = match args.out {
        Some(o) => o,
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    println!("resuming at episode {}", state.next_episode());
    let journal = Journal {
        path: args.checkpoint.clone(),
    };
    let result = adasup_core::resume_simulated(state, &journal)?;
    report(&result, &out)
}

fn load_truth(path: &Path) -> Result<DatasetModel> {
    if path.is_dir() {
        let ingested = ingest_voc_annotations(path, &CategoryPolicy::Collect)?;
        for w in &ingested.warnings {
            log::warn!("{w}");
        }
        Ok(ingested.dataset)
    } else {
        Ok(DatasetModel::read_snapshot(path)?)
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        return Err(CliError::Usage(format!("--iou must lie in (0, 1], got {}", args.iou)));
    }
    let text = std::fs::read_to_string(&args.predictions)
        .map_err(|e| CliError::Usage(format!("reading {}: {e}", args.predictions.display())))?;
    let predictions: BTreeMap<ImageId, Vec<Prediction>> =
        serde_json::from_str(&text).map_err(adasup_core::Error::from)?;
    let dataset = load_truth(&args.truth)?;
    let truth: Vec<ImageRecord> = match args.split {
        SplitChoice::All => dataset.train_images.iter().chain(&dataset.eval_images).cloned().collect(),
        SplitChoice::Train => dataset.train_images.clone(),
        SplitChoice::Eval => dataset.eval_images.clone(),
    };
    let options = EvalOptions {
        iou_threshold: args.iou,
        protocol: match args.protocol {
            Protocol::ElevenPoint => ApProtocol::ElevenPoint,
            Protocol::Allpoint => ApProtocol::AllPoint,
        },
    };
    let rep = evaluate(&predictions, &truth, &dataset.categories, options)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rep).map_err(adasup_core::Error::from)?);
    } else {
        println!("mAP {:.4}", rep.map);
        for (name, ap) in &rep.per_category_ap {
            println!("  {name:<20} {ap:.4}");
        }
    }
    Ok(())
}

pub fn gen_dataset(args: GenArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let dataset = adasup_core::synth::generate_synthetic_dataset(&cfg.synthetic_spec(), cfg.seed)?;
    dataset.write_snapshot(&args.out)?;
    println!(
        "wrote {}: {} train, {} eval images, {} categories",
        args.out.display(),
        dataset.train_images.len(),
        dataset.eval_images.len(),
        dataset.num_categories()
    );
    Ok(())
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let mut runs: Vec<(String, Vec<SeriesPoint>)> = Vec::new();
    for dir in &args.dirs {
        let points = results::read_series_csv(&dir.join(results::SERIES_FILE))?;
        let label = match results::read_metadata(dir) {
            Ok(meta) => format!("{} [{}]", dir.display(), meta.label),
            Err(_) => dir.display().to_string(),
        };
        runs.push((label, points));
    }
    let target = match args.target_map {
        Some(t) => t,
        None => {
            let last = runs[0].1.last().ok_or_else(|| {
                CliError::Usage(format!("{} has an empty series", args.dirs[0].display()))
            })?;
            last.map - 0.02
        }
    };
    let rows = results::compare(&runs, target);
    print!("{}", results::format_comparison(&rows, target));
    Ok(())
}
