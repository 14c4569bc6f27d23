//! Run configuration: a flat, commented TOML key-value file.
//!
//! Unknown keys are rejected so a typo in a threshold name cannot silently
//! fall back to a default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::Strategy;
use crate::data::DatasetModel;
use crate::detector::SurrogateParams;
use crate::error::{Error, Result};
use crate::evaluator::{ApProtocol, EvalOptions};
use crate::oracle::DeciSeconds;
use crate::synth::{generate_synthetic_dataset, SyntheticSpec};
use crate::voc::{ingest_voc_annotations, CategoryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Voc,
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Per-image weak/strong decision every episode.
    Soft,
    /// Weak episodes until the mAP gain plateaus, then strong for good.
    Hard,
    /// Weak supervision only.
    None,
    /// Standard pool-based active learning with boxes only.
    StrongOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Soft => "soft",
            Variant::Hard => "hard",
            Variant::None => "none",
            Variant::StrongOnly => "strong_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Simulated,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub dataset_path: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_width: u32,
    pub synthetic_height: u32,
    pub synthetic_categories: usize,
    pub synthetic_objects_min: usize,
    pub synthetic_objects_max: usize,
    pub synthetic_box_min_frac: f64,
    pub synthetic_box_max_frac: f64,
    pub eval_fraction: f64,

    pub seed: u64,
    pub budget_hours: f64,
    pub initial_pool_fraction: f64,
    pub b_strong: usize,
    pub b_weak: usize,
    pub strategy: Strategy,
    pub variant: Variant,
    pub gamma: f64,
    pub delta: f64,
    pub max_episodes: usize,

    pub q_min: f64,
    pub tau: Option<f64>,
    pub alpha: f64,
    pub miss_rate: f64,
    pub jitter: f64,
    pub false_positive_rate: f64,
    pub label_confusion: f64,
    /// Spawn this program as an external detector instead of the surrogate.
    pub detector_command: Option<String>,

    pub oracle: OracleMode,
    pub click_noise: f64,
    pub charge_initial_pool: bool,
    pub ap_protocol: ApProtocol,
    pub iou_threshold: f64,

    pub ticket_expiry_minutes: f64,
    pub image_base_url: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let surrogate = SurrogateParams::default();
        Self {
            dataset: DatasetSource::Synthetic,
            dataset_path: None,
            synthetic_images: synth.images,
            synthetic_width: synth.width,
            synthetic_height: synth.height,
            synthetic_categories: synth.categories,
            synthetic_objects_min: synth.objects_min,
            synthetic_objects_max: synth.objects_max,
            synthetic_box_min_frac: synth.box_min_frac,
            synthetic_box_max_frac: synth.box_max_frac,
            eval_fraction: synth.eval_fraction,
            seed: 0,
            budget_hours: 35.0,
            initial_pool_fraction: 0.1,
            b_strong: 250,
            b_weak: 500,
            strategy: Strategy::AvgEntropy,
            variant: Variant::Soft,
            gamma: 0.3,
            delta: 0.75,
            max_episodes: 1000,
            q_min: surrogate.q_min,
            tau: surrogate.tau,
            alpha: surrogate.alpha,
            miss_rate: surrogate.miss_rate,
            jitter: surrogate.jitter,
            false_positive_rate: surrogate.false_positive_rate,
            label_confusion: surrogate.label_confusion,
            detector_command: None,
            oracle: OracleMode::Simulated,
            click_noise: 0.1,
            charge_initial_pool: false,
            ap_protocol: ApProtocol::ElevenPoint,
            iou_threshold: 0.5,
            ticket_expiry_minutes: 30.0,
            image_base_url: None,
        }
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("voc2007", include_str!("../presets/voc2007.toml")),
    ("voc2012", include_str!("../presets/voc2012.toml")),
    ("wheat", include_str!("../presets/wheat.toml")),
    ("desk", include_str!("../presets/desk.toml")),
];

pub fn preset(name: &str) -> Option<RunConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_config_str(text).expect("bundled preset is valid"))
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    let mut cfg = parse_config_str(&text)?;
    // relative dataset paths resolve against the config file
    if let (Some(p), Some(dir)) = (&cfg.dataset_path, path.parent()) {
        if p.is_relative() {
            cfg.dataset_path = Some(dir.join(p));
        }
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.message().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(ok: bool, field: &str, value: impl fmt::Display, constraint: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            field: field.into(),
            value: value.to_string(),
            constraint: constraint.into(),
        })
    }
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.budget_hours > 0.0 && self.budget_hours.is_finite(), "budget_hours", self.budget_hours, "must be > 0")?;
        check(unit(self.gamma), "gamma", self.gamma, "must lie in [0, 1]")?;
        check(unit(self.delta), "delta", self.delta, "must lie in [0, 1]")?;
        check(open_unit(self.initial_pool_fraction), "initial_pool_fraction", self.initial_pool_fraction, "must lie in (0, 1)")?;
        check(open_unit(self.eval_fraction), "eval_fraction", self.eval_fraction, "must lie in (0, 1)")?;
        check(self.b_strong >= 1, "b_strong", self.b_strong, "must be >= 1")?;
        check(self.b_weak >= 1, "b_weak", self.b_weak, "must be >= 1")?;
        check(self.max_episodes >= 1, "max_episodes", self.max_episodes, "must be >= 1")?;
        check(unit(self.q_min), "q_min", self.q_min, "must lie in [0, 1]")?;
        if let Some(tau) = self.tau {
            check(tau > 0.0, "tau", tau, "must be > 0")?;
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("miss_rate", self.miss_rate),
            ("jitter", self.jitter),
            ("false_positive_rate", self.false_positive_rate),
            ("label_confusion", self.label_confusion),
            ("click_noise", self.click_noise),
        ] {
            check(v >= 0.0 && v.is_finite(), name, v, "must be a finite value >= 0")?;
        }
        check(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0, "iou_threshold", self.iou_threshold, "must lie in (0, 1]")?;
        check(self.ticket_expiry_minutes > 0.0, "ticket_expiry_minutes", self.ticket_expiry_minutes, "must be > 0")?;
        match self.dataset {
            DatasetSource::Synthetic => self.synthetic_spec().validate()?,
            DatasetSource::Voc | DatasetSource::Snapshot => check(
                self.dataset_path.is_some(),
                "dataset_path",
                "<missing>",
                "required when dataset is voc or snapshot",
            )?,
        }
        Ok(())
    }

    pub fn budget(&self) -> DeciSeconds {
        DeciSeconds::from_hours(self.budget_hours)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            images: self.synthetic_images,
            width: self.synthetic_width,
            height: self.synthetic_height,
            categories: self.synthetic_categories,
            objects_min: self.synthetic_objects_min,
            objects_max: self.synthetic_objects_max,
            box_min_frac: self.synthetic_box_min_frac,
            box_max_frac: self.synthetic_box_max_frac,
            eval_fraction: self.eval_fraction,
        }
    }

    pub fn surrogate_params(&self) -> SurrogateParams {
        SurrogateParams {
            q_min: self.q_min,
            tau: self.tau,
            alpha: self.alpha,
            miss_rate: self.miss_rate,
            jitter: self.jitter,
            false_positive_rate: self.false_positive_rate,
            label_confusion: self.label_confusion,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            iou_threshold: self.iou_threshold,
            protocol: self.ap_protocol,
        }
    }

    /// Builds the dataset this config points at.
    pub fn load_dataset(&self) -> Result<DatasetModel> {
        match self.dataset {
            DatasetSource::Synthetic => generate_synthetic_dataset(&self.synthetic_spec(), self.seed),
            DatasetSource::Voc => {
                let dir = self.dataset_path.as_deref().expect("validated");
                let ingested = ingest_voc_annotations(dir, &CategoryPolicy::Collect)?;
                ingested.dataset.resplit(self.eval_fraction, self.seed)
            }
            DatasetSource::Snapshot => {
                let d = DatasetModel::read_snapshot(self.dataset_path.as_deref().expect("validated"))?;
                if d.eval_images.is_empty() {
                    d.resplit(self.eval_fraction, self.seed)
                } else {
                    Ok(d)
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Values are read as TOML literals and
    /// fall back to bare strings, so `variant=hard` and `tau=500` both work.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for (key, value) in overrides {
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.clone()));
            table.insert(key.clone(), parsed);
        }
        parse_config_str(&table.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_reject_unknown_keys() {
        let base = RunConfig::default();
        let set = |k: &str, v: &str| vec![(k.to_owned(), v.to_owned())];
        assert_eq!(base.with_overrides(&set("tau", "500")).unwrap().tau, Some(500.0));
        assert_eq!(base.with_overrides(&set("variant", "hard")).unwrap().variant, Variant::Hard);
        assert_eq!(base.with_overrides(&set("seed", "7")).unwrap().seed, 7);
        assert!(matches!(
            base.with_overrides(&set("detla", "0.5")),
            Err(Error::ConfigParse(_))
        ));
        assert!(matches!(base.with_overrides(&set("delta", "2")), Err(Error::Config { .. })));
    }

    #[test]
    fn voc2007_preset_values() {
        let c = preset("voc2007").unwrap();
        assert_eq!(c.budget_hours, 35.0);
        assert_eq!(c.b_strong, 250);
        assert_eq!(c.b_weak, 500);
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.delta, 0.75);
        assert_eq!(c.initial_pool_fraction, 0.1);
    }

    #[test]
    fn wheat_preset_values() {
        let c = preset("wheat").unwrap();
        assert_eq!(c.budget_hours, 50.0);
        assert_eq!(c.delta, 0.85);
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.synthetic_categories, 1);
    }

    #[test]
    fn all_presets_parse() {
        for (name, _) in PRESETS {
            assert!(preset(name).is_some(), "{name}");
        }
    }

    #[test]
    fn gamma_out_of_range_names_field() {
        let err = parse_config_str("gamma = 1.5").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma") && msg.contains("1.5") && msg.contains("[0, 1]"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = parse_config_str("gama = 0.3").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn other_constraints() {
        assert!(parse_config_str("budget_hours = 0").is_err());
        assert!(parse_config_str("b_weak = 0").is_err());
        assert!(parse_config_str("initial_pool_fraction = 1.0").is_err());
        assert!(parse_config_str("delta = -0.1").is_err());
        assert!(parse_config_str("dataset = \"voc\"").is_err());
        assert!(parse_config_str("strategy = \"max_margin\"\nvariant = \"hard\"").is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = preset("desk").unwrap();
        assert_eq!(parse_config_str(&c.to_toml()).unwrap(), c);
    }
}
