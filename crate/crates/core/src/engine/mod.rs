//! The adaptive-supervision episode loop.
//!
//! Each episode samples a batch from `U ∪ W`, asks for clicks (or boxes),
//! pseudo-labels the clicked images from the current detector, escalates
//! images to box annotation according to the active switch, retrains on
//! `L ∪ W` and evaluates. An episode works on a copy of the run state and
//! is committed as a whole.

mod pools;
mod switching;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use pools::{PoolKind, Pools};
pub use switching::{gain_terms, hard_switch, pseudo_label, soft_switch, PseudoLabel, SoftDecision};

use crate::acquisition::{predict_all, select_from_predictions};
use crate::config::{RunConfig, Variant};
use crate::data::{DatasetModel, ImageId};
use crate::detector::{Detector, TrainingCorpus};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport};
use crate::oracle::{AnnotationLedger, AnnotationSource, DeciSeconds, LedgerEntry, OracleState};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    /// Training on the initial strong pool.
    Initial,
    /// Clicks only; every sampled image is pseudo-labeled.
    Weak,
    /// Clicks on all, boxes on the low-confidence part.
    Soft,
    /// Boxes only.
    Strong,
}

impl EpisodeMode {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeMode::Initial => "initial",
            EpisodeMode::Weak => "weak",
            EpisodeMode::Soft => "soft",
            EpisodeMode::Strong => "strong",
        }
    }
}

impl fmt::Display for EpisodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub variant: Variant,
    pub gamma: f64,
    pub delta: f64,
    pub hard_fired: bool,
    pub hard_fired_at: Option<u32>,
}

impl SwitchState {
    pub fn new(variant: Variant, gamma: f64, delta: f64) -> Self {
        Self {
            variant,
            gamma,
            delta,
            hard_fired: false,
            hard_fired_at: None,
        }
    }

    pub fn episode_mode(&self) -> EpisodeMode {
        match self.variant {
            Variant::Soft => EpisodeMode::Soft,
            Variant::None => EpisodeMode::Weak,
            Variant::StrongOnly => EpisodeMode::Strong,
            Variant::Hard if self.hard_fired => EpisodeMode::Strong,
            Variant::Hard => EpisodeMode::Weak,
        }
    }

    fn fire(&mut self, episode: u32) {
        if !self.hard_fired {
            self.hard_fired = true;
            self.hard_fired_at = Some(episode);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u32,
    pub mode: EpisodeMode,
    /// The actively sampled batch `S`, in selection order.
    pub sampled: Vec<ImageId>,
    /// Images that received a click query, in query order.
    pub weak_queried: Vec<ImageId>,
    pub strong_queried: Vec<ImageId>,
    pub pseudo_labels: BTreeMap<ImageId, Vec<PseudoLabel>>,
    pub confidence: BTreeMap<ImageId, f64>,
    pub s_high: Vec<ImageId>,
    pub s_low: Vec<ImageId>,
    pub report: EvalReport,
    pub d_n: Option<f64>,
    pub d_max: Option<f64>,
    pub hard_switch_decision: Option<bool>,
    pub hard_fired: bool,
    pub seconds: DeciSeconds,
    pub cum_seconds: DeciSeconds,
    pub n_strong_total: usize,
    pub n_weak_total: usize,
}

impl EpisodeRecord {
    pub fn map(&self) -> f64 {
        self.report.map
    }

    pub fn n_strong_queried(&self) -> usize {
        self.strong_queried.len()
    }

    pub fn n_weak_queried(&self) -> usize {
        self.weak_queried.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    PoolsExhausted,
    /// An episode charged nothing, so the next one could not progress either.
    Stalled,
    EpisodeLimit,
}

/// Everything needed to continue a run; serialized as the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub pools: Pools,
    pub oracle: OracleState,
    pub corpus: TrainingCorpus,
    pub switch: SwitchState,
    pub episodes: Vec<EpisodeRecord>,
    pub stop: Option<StopReason>,
}

impl RunState {
    pub fn next_episode(&self) -> u32 {
        self.episodes.len() as u32
    }

    pub fn latest_map(&self) -> Option<f64> {
        self.episodes.last().map(EpisodeRecord::map)
    }

    pub fn map_history(&self) -> Vec<f64> {
        self.episodes.iter().map(EpisodeRecord::map).collect()
    }

    pub fn ledger(&self) -> &AnnotationLedger {
        &self.oracle.ledger
    }

    /// Why the loop would stop now, if it would.
    pub fn stop_condition(&self) -> Option<StopReason> {
        if self.stop.is_some() {
            return self.stop;
        }
        if self.oracle.budget_exhausted() {
            Some(StopReason::BudgetExhausted)
        } else if self.pools.candidates().is_empty() {
            Some(StopReason::PoolsExhausted)
        } else if self.episodes.len() > self.config.max_episodes {
            Some(StopReason::EpisodeLimit)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub episodes: Vec<EpisodeRecord>,
    pub ledger: AnnotationLedger,
    pub final_report: EvalReport,
    pub stop_reason: StopReason,
}

impl RunResult {
    fn from_state(state: RunState) -> Self {
        let final_report = state
            .episodes
            .last()
            .map(|e| e.report.clone())
            .expect("initial episode always present");
        Self {
            stop_reason: state.stop.unwrap_or(StopReason::BudgetExhausted),
            config: state.config,
            episodes: state.episodes,
            ledger: state.oracle.ledger,
            final_report,
        }
    }
}

/// Callbacks from the loop. `committed` runs after every episode commit and
/// may persist the state; an error aborts the run.
pub trait RunObserver {
    fn annotation(&self, _entry: &LedgerEntry, _cumulative: DeciSeconds) {}

    fn committed(&self, _state: &RunState) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// The collaborators of a run that are not part of its serializable state.
pub struct Runtime<'a> {
    pub dataset: &'a DatasetModel,
    pub detector: &'a mut dyn Detector,
    pub source: &'a mut dyn AnnotationSource,
    pub observer: &'a dyn RunObserver,
}

impl Runtime<'_> {
    fn evaluate(&self, config: &RunConfig, episode: u32) -> Result<EvalReport> {
        let ids: Vec<ImageId> = self.dataset.eval_images.iter().map(|i| i.image_id.clone()).collect();
        let preds = predict_all(&ids, &*self.detector, self.dataset, config.seed, episode)?;
        evaluate(&preds, &self.dataset.eval_images, &self.dataset.categories, config.eval_options())
    }
}

/// Seeded random initial strong pool of `round(fraction * n)` images, at
/// least one.
pub fn initial_pool(train_ids: &BTreeSet<ImageId>, fraction: f64, seed: u64) -> BTreeSet<ImageId> {
    let n = ((train_ids.len() as f64 * fraction).round() as usize)
        .max(1)
        .min(train_ids.len());
    let mut keyed: Vec<(u64, &ImageId)> = train_ids
        .iter()
        .map(|id| (StreamKey::new(seed, "initial-pool").item(id.as_str()).rng().next_u64(), id))
        .collect();
    keyed.sort();
    keyed.into_iter().take(n).map(|(_, id)| id.clone()).collect()
}

/// Labels the initial pool, trains and evaluates: episode 0.
pub fn initialize(config: &RunConfig, rt: &mut Runtime<'_>) -> Result<RunState> {
    config.validate()?;
    let train_ids = rt.dataset.train_ids();
    if train_ids.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    if rt.dataset.eval_images.is_empty() {
        return Err(Error::Dataset("eval split is empty".into()));
    }
    let initial = initial_pool(&train_ids, config.initial_pool_fraction, config.seed);
    let mut oracle = OracleState::new(config.budget());
    let mut corpus = TrainingCorpus::default();
    for id in &initial {
        let image = rt.dataset.image(id)?;
        let ann = oracle.seed_strong(image, rt.source, config.charge_initial_pool)?;
        if config.charge_initial_pool {
            let entry = oracle.ledger.entries().last().expect("charged entry");
            rt.observer.annotation(entry, oracle.ledger.cumulative());
        }
        corpus.insert_strong(ann);
    }
    let pools = Pools::new(&train_ids, &initial)?;
    rt.detector.train(&corpus, 0)?;
    let report = rt.evaluate(config, 0)?;
    info!("initial pool of {} images, mAP {:.4}", initial.len(), report.map);

    let cum = oracle.ledger.cumulative();
    let record = EpisodeRecord {
        index: 0,
        mode: EpisodeMode::Initial,
        sampled: initial.iter().cloned().collect(),
        weak_queried: Vec::new(),
        strong_queried: initial.iter().cloned().collect(),
        pseudo_labels: BTreeMap::new(),
        confidence: BTreeMap::new(),
        s_high: Vec::new(),
        s_low: Vec::new(),
        report,
        d_n: None,
        d_max: None,
        hard_switch_decision: None,
        hard_fired: false,
        seconds: cum,
        cum_seconds: cum,
        n_strong_total: pools.strong().len(),
        n_weak_total: 0,
    };
    let state = RunState {
        config: config.clone(),
        pools,
        oracle,
        corpus,
        switch: SwitchState::new(config.variant, config.gamma, config.delta),
        episodes: vec![record],
        stop: None,
    };
    rt.observer.committed(&state)?;
    Ok(state)
}

/// One full episode against a copy of `state`; the returned state has the
/// new record appended. `state` itself is never modified.
pub fn run_episode(state: &RunState, rt: &mut Runtime<'_>) -> Result<RunState> {
    let cfg = &state.config;
    let episode = state.next_episode();
    let mode = state.switch.episode_mode();
    let candidates = state.pools.candidates();
    if candidates.is_empty() {
        return Err(Error::PoolInvariant("no candidates left in U ∪ W".into()));
    }

    let mut next = state.clone();
    let cum_before = next.oracle.ledger.cumulative();
    let batch_size = if mode == EpisodeMode::Strong { cfg.b_strong } else { cfg.b_weak };
    let predictions = predict_all(&candidates, &*rt.detector, rt.dataset, cfg.seed, episode)?;
    let (sampled, _) = select_from_predictions(&predictions, cfg.strategy, batch_size, (cfg.seed, episode));

    let mut weak_queried = Vec::new();
    let mut strong_queried = Vec::new();
    let mut pseudo_labels = BTreeMap::new();
    let mut confidence = BTreeMap::new();
    let mut s_high = Vec::new();
    let mut s_low = Vec::new();

    if mode == EpisodeMode::Strong {
        for id in &sampled {
            if next.oracle.budget_exhausted() {
                break;
            }
            strong(&mut next, rt, id, episode)?;
            strong_queried.push(id.clone());
        }
    } else {
        let mut clicks = Vec::new();
        for id in &sampled {
            if next.oracle.budget_exhausted() {
                break;
            }
            let image = rt.dataset.image(id)?;
            let (ann, entry) = next.oracle.query_weak(image, rt.source, episode)?;
            rt.observer.annotation(&entry, next.oracle.ledger.cumulative());
            weak_queried.push(id.clone());
            clicks.push(ann);
        }
        for ann in &clicks {
            let (labels, c) = pseudo_label(&predictions[&ann.image_id], ann);
            confidence.insert(ann.image_id.clone(), c);
            pseudo_labels.insert(ann.image_id.clone(), labels);
            let low = mode == EpisodeMode::Soft && soft_switch(c, cfg.delta) == SoftDecision::StrongQuery;
            if low {
                s_low.push(ann.image_id.clone());
            } else {
                s_high.push(ann.image_id.clone());
            }
        }
        for id in &s_low {
            // out of budget: the image keeps its pool and stays a candidate
            if next.oracle.budget_exhausted() {
                break;
            }
            strong(&mut next, rt, id, episode)?;
            strong_queried.push(id.clone());
        }
        for id in &s_high {
            next.pools.promote(id, PoolKind::Weak)?;
            next.corpus.set_pseudo(id.clone(), pseudo_labels[id].clone())?;
        }
    }

    next.pools.check_partition(&rt.dataset.train_ids())?;
    rt.detector.train(&next.corpus, episode)?;
    let report = rt.evaluate(cfg, episode)?;

    let mut history = state.map_history();
    history.push(report.map);
    let terms = gain_terms(&history);
    let mut decision = None;
    if cfg.variant == Variant::Hard && mode == EpisodeMode::Weak {
        let fire = hard_switch(&history, cfg.gamma);
        if fire {
            if terms.is_some_and(|(_, d_max)| d_max <= 0.0) {
                warn!("episode {episode}: no episode improved mAP (d_max <= 0); hard switch fires");
            }
            info!("episode {episode}: hard switch fired, strong supervision from now on");
            next.switch.fire(episode);
        }
        decision = Some(fire);
    }

    let cum = next.oracle.ledger.cumulative();
    info!(
        "episode {episode} [{mode}]: sampled {}, weak {}, strong {}, mAP {:.4}, {:.2} h",
        sampled.len(),
        weak_queried.len(),
        strong_queried.len(),
        report.map,
        cum.hours()
    );
    next.episodes.push(EpisodeRecord {
        index: episode,
        mode,
        sampled,
        weak_queried,
        strong_queried,
        pseudo_labels,
        confidence,
        s_high,
        s_low,
        report,
        d_n: terms.map(|t| t.0),
        d_max: terms.map(|t| t.1),
        hard_switch_decision: decision,
        hard_fired: next.switch.hard_fired,
        seconds: DeciSeconds(cum.0 - cum_before.0),
        cum_seconds: cum,
        n_strong_total: next.pools.strong().len(),
        n_weak_total: next.pools.weak().len(),
    });
    Ok(next)
}

fn strong(next: &mut RunState, rt: &mut Runtime<'_>, id: &ImageId, episode: u32) -> Result<()> {
    let image = rt.dataset.image(id)?;
    let (ann, entry) = next.oracle.query_strong(image, rt.source, episode)?;
    rt.observer.annotation(&entry, next.oracle.ledger.cumulative());
    next.pools.promote(id, PoolKind::Strong)?;
    next.corpus.insert_strong(ann);
    Ok(())
}

/// Runs episodes until a stop condition holds.
pub fn continue_run(mut state: RunState, rt: &mut Runtime<'_>) -> Result<RunResult> {
    loop {
        if let Some(reason) = state.stop_condition() {
            state.stop = Some(reason);
            break;
        }
        state = run_episode(&state, rt)?;
        if state.episodes.last().is_some_and(|e| e.seconds == DeciSeconds::ZERO) {
            state.stop = Some(StopReason::Stalled);
        }
        rt.observer.committed(&state)?;
    }
    info!("run stopped: {:?}", state.stop);
    Ok(RunResult::from_state(state))
}

pub fn run(config: &RunConfig, rt: &mut Runtime<'_>) -> Result<RunResult> {
    let state = initialize(config, rt)?;
    continue_run(state, rt)
}

/// Continues from a committed state. The detector is retrained on the
/// state's corpus first.
pub fn resume(state: RunState, rt: &mut Runtime<'_>) -> Result<RunResult> {
    let last = state.episodes.last().map_or(0, |e| e.index);
    rt.detector.train(&state.corpus, last)?;
    continue_run(state, rt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::detector::SurrogateDetector;
    use crate::oracle::{AnnotationMode, SimulatedSource};

    fn tiny(variant: Variant) -> RunConfig {
        RunConfig {
            synthetic_images: 120,
            synthetic_categories: 3,
            budget_hours: 0.6,
            b_strong: 8,
            b_weak: 16,
            variant,
            ..preset("desk").unwrap()
        }
    }

    fn go(cfg: &RunConfig) -> RunResult {
        let dataset = cfg.load_dataset().unwrap();
        let mut det = SurrogateDetector::new(cfg.surrogate_params(), dataset.train_images.len(), dataset.num_categories());
        let mut src = SimulatedSource::new(cfg.seed, cfg.click_noise);
        let mut rt = Runtime {
            dataset: &dataset,
            detector: &mut det,
            source: &mut src,
            observer: &NoopObserver,
        };
        run(cfg, &mut rt).unwrap()
    }

    #[test]
    fn initial_pool_is_ten_percent() {
        let ids: BTreeSet<ImageId> = (0..500).map(|i| ImageId::new(format!("{i:04}"))).collect();
        let pool = initial_pool(&ids, 0.1, 3);
        assert_eq!(pool.len(), 50);
        assert_eq!(pool, initial_pool(&ids, 0.1, 3));
        assert_ne!(pool, initial_pool(&ids, 0.1, 4));
    }

    #[test]
    fn tiny_budget_runs_no_episodes() {
        let cfg = RunConfig {
            budget_hours: 0.1,
            charge_initial_pool: true,
            ..tiny(Variant::Soft)
        };
        let r = go(&cfg);
        assert_eq!(r.episodes.len(), 1);
        assert_eq!(r.stop_reason, StopReason::BudgetExhausted);
    }

    #[test]
    fn strong_only_never_goes_weak() {
        let r = go(&tiny(Variant::StrongOnly));
        assert!(r.episodes.len() > 1);
        assert!(r.ledger.entries().iter().all(|e| e.mode == AnnotationMode::Strong));
        assert!(r.episodes.iter().all(|e| e.pseudo_labels.is_empty() && e.n_weak_total == 0));
    }

    #[test]
    fn soft_split_follows_threshold() {
        let r = go(&tiny(Variant::Soft));
        for e in &r.episodes[1..] {
            for id in &e.s_low {
                assert!(e.confidence[id] < 0.75);
            }
            for id in &e.s_high {
                assert!(e.confidence[id] >= 0.75);
            }
            assert_eq!(e.s_low.len() + e.s_high.len(), e.weak_queried.len());
        }
    }

    #[test]
    fn episode_seconds_match_ledger() {
        let r = go(&tiny(Variant::Hard));
        for e in &r.episodes[1..] {
            let sum: DeciSeconds = r
                .ledger
                .entries()
                .iter()
                .filter(|x| x.episode == e.index)
                .map(|x| x.seconds)
                .sum();
            assert_eq!(sum, e.seconds);
        }
        assert_eq!(r.episodes.last().unwrap().cum_seconds, r.ledger.cumulative());
    }
}
