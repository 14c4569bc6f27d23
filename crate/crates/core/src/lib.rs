//! Adaptive-supervision active learning for object detection.
//!
//! The loop alternates cheap center-click annotations with full box
//! annotations under an annotation-time budget, escalating supervision per
//! image (soft switch) or for the whole run (hard switch). Annotations come
//! from ground truth or a live annotator; the detector is a deterministic
//! surrogate or an external process.

pub mod acquisition;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detector;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod oracle;
pub mod results;
pub mod rng;
pub mod synth;
pub mod voc;
pub mod wire;

pub use config::{RunConfig, Variant};
pub use data::{BBox, DatasetModel, ImageId, ImageRecord, Point};
pub use engine::{RunResult, RunState};
pub use error::{Error, Result};

use detector::{Detector, SurrogateDetector};
use engine::{RunObserver, Runtime};
use oracle::SimulatedSource;

/// The detector a config asks for: an external process when
/// `detector_command` is set, the surrogate otherwise.
pub fn build_detector(cfg: &RunConfig, dataset: &DatasetModel) -> Result<Box<dyn Detector>> {
    match &cfg.detector_command {
        Some(cmd) => {
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| Error::Config {
                    field: "detector_command".into(),
                    value: format!("{cmd:?}"),
                    constraint: "must name a program".into(),
                })?;
            let args: Vec<String> = parts.map(str::to_owned).collect();
            Ok(Box::new(detector::external::ExternalDetector::spawn(
                program,
                &args,
                dataset.num_categories(),
            )?))
        }
        None => Ok(Box::new(SurrogateDetector::new(
            cfg.surrogate_params(),
            dataset.train_images.len(),
            dataset.num_categories(),
        ))),
    }
}

/// Runs `cfg` end to end with the simulated oracle.
pub fn simulate(cfg: &RunConfig, observer: &dyn RunObserver) -> Result<RunResult> {
    let dataset = cfg.load_dataset()?;
    simulate_on(cfg, &dataset, observer)
}

pub fn simulate_on(cfg: &RunConfig, dataset: &DatasetModel, observer: &dyn RunObserver) -> Result<RunResult> {
    let mut detector = build_detector(cfg, dataset)?;
    let mut source = SimulatedSource::new(cfg.seed, cfg.click_noise);
    let mut rt = Runtime {
        dataset,
        detector: detector.as_mut(),
        source: &mut source,
        observer,
    };
    engine::run(cfg, &mut rt)
}

/// Continues a checkpointed simulated run.
pub fn resume_simulated(state: RunState, observer: &dyn RunObserver) -> Result<RunResult> {
    let cfg = state.config.clone();
    let dataset = cfg.load_dataset()?;
    let mut detector = build_detector(&cfg, &dataset)?;
    let mut source = SimulatedSource::new(cfg.seed, cfg.click_noise);
    let mut rt = Runtime {
        dataset: &dataset,
        detector: detector.as_mut(),
        source: &mut source,
        observer,
    };
    engine::resume(state, &mut rt)
}
