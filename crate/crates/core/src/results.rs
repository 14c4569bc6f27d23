//! Result files: per-episode CSV, ledger CSV, run metadata and the
//! `hours,map` learning-curve series, plus the hours-to-target comparison.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::{EpisodeRecord, RunResult, StopReason};
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const SERIES_FILE: &str = "series.csv";
pub const METADATA_SCHEMA: &str = "adasup-run/1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `episode,mode,cum_seconds,map,d_n,d_max,n_strong_total,n_weak_total,n_strong_queried,n_weak_queried,hard_fired`
pub fn write_results_csv<W: Write>(out: W, episodes: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode",
        "mode",
        "cum_seconds",
        "map",
        "d_n",
        "d_max",
        "n_strong_total",
        "n_weak_total",
        "n_strong_queried",
        "n_weak_queried",
        "hard_fired",
    ])?;
    for e in episodes {
        w.write_record([
            e.index.to_string(),
            e.mode.to_string(),
            e.cum_seconds.to_string(),
            e.map().to_string(),
            opt(e.d_n),
            opt(e.d_max),
            e.n_strong_total.to_string(),
            e.n_weak_total.to_string(),
            e.n_strong_queried().to_string(),
            e.n_weak_queried().to_string(),
            e.hard_fired.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing results csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub hours: f64,
    pub map: f64,
}

pub fn series(episodes: &[EpisodeRecord]) -> Vec<SeriesPoint> {
    episodes
        .iter()
        .map(|e| SeriesPoint {
            hours: e.cum_seconds.hours(),
            map: e.map(),
        })
        .collect()
}

pub fn write_series_csv<W: Write>(out: W, points: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("writing series csv", e))?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Fixed interpretation choices recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub margin_direction: String,
    pub soft_switch_boundary: String,
    pub switch_eval_split: String,
    pub weak_requery: String,
    pub strong_after_weak: String,
    pub charge_initial_pool: bool,
    pub ap_protocol: String,
    pub iou_threshold: f64,
    pub click_noise_sigma_fraction: f64,
    pub degenerate_hard_switch: String,
    pub stall_rule: String,
}

impl DesignFlags {
    pub fn for_config(cfg: &RunConfig) -> Self {
        Self {
            margin_direction: "ascending sum of margins (lowest first)".into(),
            soft_switch_boundary: "strong query iff c < delta".into(),
            switch_eval_split: "eval split used for hard switch and reporting".into(),
            weak_requery: "cached, zero cost".into(),
            strong_after_weak: "full box cost".into(),
            charge_initial_pool: cfg.charge_initial_pool,
            ap_protocol: serde_json::to_value(cfg.ap_protocol)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            iou_threshold: cfg.iou_threshold,
            click_noise_sigma_fraction: cfg.click_noise,
            degenerate_hard_switch: "fires when d_max <= 0".into(),
            stall_rule: "stop after an episode that charges zero seconds".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema: String,
    pub code_version: String,
    pub label: String,
    pub seed: u64,
    pub config: RunConfig,
    pub design: DesignFlags,
    pub episodes: usize,
    pub stop_reason: StopReason,
    pub total_seconds: String,
    pub final_map: f64,
}

impl RunMetadata {
    pub fn new(result: &RunResult) -> Self {
        let cfg = &result.config;
        Self {
            schema: METADATA_SCHEMA.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            label: format!("{}/{}", cfg.variant, cfg.strategy),
            seed: cfg.seed,
            config: cfg.clone(),
            design: DesignFlags::for_config(cfg),
            episodes: result.episodes.len(),
            stop_reason: result.stop_reason,
            total_seconds: result.ledger.cumulative().to_string(),
            final_map: result.final_report.map,
        }
    }
}

pub fn emit_results(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path)
            .map(|f| (std::io::BufWriter::new(f), path.clone()))
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))
    };
    let (f, results_path) = create(RESULTS_FILE)?;
    write_results_csv(f, &result.episodes)?;
    let (f, ledger_path) = create(LEDGER_FILE)?;
    result.ledger.write_csv(f)?;
    let (f, series_path) = create(SERIES_FILE)?;
    write_series_csv(f, &series(&result.episodes))?;
    let (mut f, meta_path) = create(METADATA_FILE)?;
    serde_json::to_writer_pretty(&mut f, &RunMetadata::new(result))?;
    f.flush().map_err(|e| Error::io("writing metadata", e))?;
    Ok(vec![results_path, ledger_path, series_path, meta_path])
}

pub fn read_metadata(dir: &Path) -> Result<RunMetadata> {
    let path = dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Hours at which the curve first reaches `target`, interpolating linearly
/// between consecutive points. `None` if it never does.
pub fn hours_to_target(points: &[SeriesPoint], target: f64) -> Option<f64> {
    let first = points.first()?;
    if first.map >= target {
        return Some(first.hours);
    }
    points.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (b.map >= target).then(|| {
            if b.map == a.map {
                b.hours
            } else {
                a.hours + (target - a.map) / (b.map - a.map) * (b.hours - a.hours)
            }
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub hours: Option<f64>,
    /// Relative to the first row.
    pub savings_pct: Option<f64>,
}

pub fn compare(runs: &[(String, Vec<SeriesPoint>)], target: f64) -> Vec<ComparisonRow> {
    let hours: Vec<Option<f64>> = runs.iter().map(|(_, s)| hours_to_target(s, target)).collect();
    let base = hours.first().copied().flatten();
    runs.iter()
        .zip(&hours)
        .map(|((label, _), h)| ComparisonRow {
            label: label.clone(),
            hours: *h,
            savings_pct: match (base, h) {
                (Some(b), Some(h)) if b > 0.0 => Some(100.0 * (b - h) / b),
                _ => None,
            },
        })
        .collect()
}

pub fn format_comparison(rows: &[ComparisonRow], target: f64) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(3);
    let mut s = format!("target mAP {target:.4}\n{:<width$}  {:>10}  {:>9}\n", "run", "hours", "savings");
    for r in rows {
        let hours = r.hours.map_or("not reached".to_string(), |h| format!("{h:.2}"));
        let savings = r.savings_pct.map_or("-".to_string(), |p| format!("{p:.1}%"));
        s.push_str(&format!("{:<width$}  {hours:>10}  {savings:>9}\n", r.label));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<SeriesPoint> {
        v.iter().map(|&(hours, map)| SeriesPoint { hours, map }).collect()
    }

    #[test]
    fn interpolates_between_points() {
        let s = pts(&[(0.0, 0.3), (10.0, 0.5), (20.0, 0.6)]);
        assert_eq!(hours_to_target(&s, 0.3), Some(0.0));
        assert!((hours_to_target(&s, 0.4).unwrap() - 5.0).abs() < 1e-12);
        assert!((hours_to_target(&s, 0.55).unwrap() - 15.0).abs() < 1e-12);
        assert_eq!(hours_to_target(&s, 0.7), None);
    }

    #[test]
    fn first_crossing_counts() {
        let s = pts(&[(0.0, 0.1), (5.0, 0.6), (6.0, 0.4), (9.0, 0.7)]);
        assert!((hours_to_target(&s, 0.5).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn savings_table() {
        let rows = compare(
            &[
                ("pbal".into(), pts(&[(0.0, 0.2), (35.0, 0.55)])),
                ("soft".into(), pts(&[(0.0, 0.2), (24.5, 0.55)])),
                ("never".into(), pts(&[(0.0, 0.2)])),
            ],
            0.55,
        );
        assert!((rows[1].savings_pct.unwrap() - 30.0).abs() < 1e-9);
        assert_eq!(rows[2].hours, None);
        let text = format_comparison(&rows, 0.55);
        assert!(text.contains("30.0%") && text.contains("not reached"), "{text}");
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = pts(&[(0.0, 0.25), (1.5, 0.5)]);
        write_series_csv(std::fs::File::create(&path).unwrap(), &s).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("hours,map\n"));
        assert_eq!(read_series_csv(&path).unwrap(), s);
    }
}
