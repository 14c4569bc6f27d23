//! Informativeness scores and batch selection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetModel, ImageId};
use crate::detector::{ContextKey, Detector, Prediction};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MaxMargin,
    AvgEntropy,
    LeastConfident,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MaxMargin => "max_margin",
            Strategy::AvgEntropy => "avg_entropy",
            Strategy::LeastConfident => "least_confident",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            Strategy::MaxMargin,
            Strategy::AvgEntropy,
            Strategy::LeastConfident,
            Strategy::Random,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Sum of per-box margins; 0 for an image without predictions.
pub fn margin_score(preds: &[Prediction]) -> f64 {
    preds.iter().map(Prediction::margin).sum()
}

/// Mean per-box entropy; `+inf` for an image without predictions.
pub fn entropy_score(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return f64::INFINITY;
    }
    preds.iter().map(Prediction::entropy).sum::<f64>() / preds.len() as f64
}

/// Highest top-class probability; 0 for an image without predictions.
pub fn confidence_score(preds: &[Prediction]) -> f64 {
    preds.iter().map(Prediction::top_prob).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub image_id: ImageId,
    pub strategy: Strategy,
    pub value: f64,
    pub selection_rank: usize,
}

/// Scores every candidate and returns them ranked best-first.
/// `random_key` is the `(seed, episode)` used for the random strategy.
pub fn rank_candidates(
    predictions: &BTreeMap<ImageId, Vec<Prediction>>,
    strategy: Strategy,
    random_key: (u64, u32),
) -> Vec<AcquisitionScore> {
    let mut scored: Vec<(ImageId, f64)> = predictions
        .iter()
        .map(|(id, preds)| {
            let value = match strategy {
                Strategy::MaxMargin => margin_score(preds),
                Strategy::AvgEntropy => entropy_score(preds),
                Strategy::LeastConfident => confidence_score(preds),
                Strategy::Random => {
                    let (seed, episode) = random_key;
                    let draw = StreamKey::new(seed, "acquire/random")
                        .episode(episode as u64)
                        .item(id.as_str())
                        .rng()
                        .next_u64();
                    (draw >> 11) as f64 / (1u64 << 53) as f64
                }
            };
            (id.clone(), value)
        })
        .collect();
    scored.sort_by(|a, b| {
        let by_value = match strategy {
            Strategy::AvgEntropy => b.1.total_cmp(&a.1),
            _ => a.1.total_cmp(&b.1),
        };
        by_value.then_with(|| a.0.cmp(&b.0))
    });
    scored
        .into_iter()
        .enumerate()
        .map(|(rank, (image_id, value))| AcquisitionScore {
            image_id,
            strategy,
            value,
            selection_rank: rank,
        })
        .collect()
}

/// First `min(b, n)` of the ranking.
pub fn select_from_predictions(
    predictions: &BTreeMap<ImageId, Vec<Prediction>>,
    strategy: Strategy,
    batch_size: usize,
    random_key: (u64, u32),
) -> (Vec<ImageId>, Vec<AcquisitionScore>) {
    let ranking = rank_candidates(predictions, strategy, random_key);
    let batch = ranking
        .iter()
        .take(batch_size)
        .map(|s| s.image_id.clone())
        .collect();
    (batch, ranking)
}

/// Runs the detector on every candidate and selects the batch `S`.
pub fn select_batch(
    candidates: &[ImageId],
    strategy: Strategy,
    batch_size: usize,
    detector: &dyn Detector,
    dataset: &DatasetModel,
    seed: u64,
    episode: u32,
) -> Result<Vec<ImageId>> {
    if batch_size == 0 {
        return Err(Error::Config {
            field: "batch_size".into(),
            value: "0".into(),
            constraint: "must be >= 1".into(),
        });
    }
    let predictions = predict_all(candidates, detector, dataset, seed, episode)?;
    Ok(select_from_predictions(&predictions, strategy, batch_size, (seed, episode)).0)
}

/// Predictions for each id, computed in parallel.
pub fn predict_all(
    ids: &[ImageId],
    detector: &dyn Detector,
    dataset: &DatasetModel,
    seed: u64,
    episode: u32,
) -> Result<BTreeMap<ImageId, Vec<Prediction>>> {
    use rayon::prelude::*;
    ids.par_iter()
        .map(|id| {
            let image = dataset.image(id)?;
            let ctx = ContextKey {
                seed,
                episode,
                image_id: id.clone(),
            };
            Ok((id.clone(), detector.predict(image, &ctx)?))
        })
        .collect()
}

/// `image_id,strategy,score,rank,selected`
pub fn write_score_dump<W: Write>(out: W, ranking: &[AcquisitionScore], batch_size: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "strategy", "score", "rank", "selected"])?;
    for s in ranking {
        w.write_record([
            s.image_id.to_string(),
            s.strategy.to_string(),
            s.value.to_string(),
            s.selection_rank.to_string(),
            (s.selection_rank < batch_size).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing score dump", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BBox;

    fn p(scores: &[f64]) -> Prediction {
        Prediction {
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn margin_examples() {
        assert!((margin_score(&[p(&[0.7, 0.2, 0.1])]) - 0.5).abs() < 1e-12);
        assert!((margin_score(&[p(&[0.6, 0.4]), p(&[0.9, 0.1])]) - 1.0).abs() < 1e-12);
        assert_eq!(margin_score(&[]), 0.0);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_score(&[p(&[0.5, 0.5])]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(entropy_score(&[p(&[1.0, 0.0, 0.0])]), 0.0);
        let mean = entropy_score(&[p(&[0.5, 0.5]), p(&[1.0, 0.0])]);
        assert!((mean - 0.3466).abs() < 1e-4);
        assert_eq!(entropy_score(&[]), f64::INFINITY);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence_score(&[p(&[0.9, 0.1]), p(&[0.4, 0.6])]), 0.9);
        assert_eq!(confidence_score(&[p(&[0.34, 0.33, 0.33])]), 0.34);
        assert_eq!(confidence_score(&[]), 0.0);
    }

    fn entropy_candidates() -> BTreeMap<ImageId, Vec<Prediction>> {
        // binary entropies: h(0.98)~0.098, h(0.5)=0.693, h(0.8)~0.500
        [
            (ImageId::new("a"), vec![p(&[0.98, 0.02])]),
            (ImageId::new("b"), vec![p(&[0.5, 0.5])]),
            (ImageId::new("c"), vec![p(&[0.8, 0.2])]),
        ]
        .into()
    }

    #[test]
    fn entropy_selects_descending() {
        let (batch, _) = select_from_predictions(&entropy_candidates(), Strategy::AvgEntropy, 2, (0, 1));
        assert_eq!(batch, vec![ImageId::new("b"), ImageId::new("c")]);
    }

    #[test]
    fn oversized_batch_returns_all() {
        let (batch, ranking) = select_from_predictions(&entropy_candidates(), Strategy::MaxMargin, 10, (0, 1));
        assert_eq!(batch.len(), 3);
        let ranks: Vec<usize> = ranking.iter().map(|s| s.selection_rank).collect();
        assert_eq!(ranks, vec![0, 1, 2]);
    }

    #[test]
    fn ties_break_by_image_id() {
        let c: BTreeMap<_, _> = [
            (ImageId::new("z"), vec![p(&[0.6, 0.4])]),
            (ImageId::new("m"), vec![p(&[0.6, 0.4])]),
            (ImageId::new("q"), vec![]),
        ]
        .into();
        let (batch, _) = select_from_predictions(&c, Strategy::LeastConfident, 3, (0, 0));
        assert_eq!(batch, vec![ImageId::new("q"), ImageId::new("m"), ImageId::new("z")]);
        // empty images rank first under margin too
        let (batch, _) = select_from_predictions(&c, Strategy::MaxMargin, 1, (0, 0));
        assert_eq!(batch, vec![ImageId::new("q")]);
    }

    #[test]
    fn random_is_seeded() {
        let c: BTreeMap<_, _> = (0..20).map(|i| (ImageId::new(format!("i{i:02}")), vec![])).collect();
        let a = select_from_predictions(&c, Strategy::Random, 5, (3, 1)).0;
        assert_eq!(a, select_from_predictions(&c, Strategy::Random, 5, (3, 1)).0);
        assert_ne!(a, select_from_predictions(&c, Strategy::Random, 5, (3, 2)).0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in ["max_margin", "avg_entropy", "least_confident", "random"] {
            assert_eq!(s.parse::<Strategy>().unwrap().name(), s);
        }
        assert!("maxmargin".parse::<Strategy>().is_err());
    }

    #[test]
    fn score_dump_marks_selected() {
        let (_, ranking) = select_from_predictions(&entropy_candidates(), Strategy::AvgEntropy, 1, (0, 0));
        let mut buf = Vec::new();
        write_score_dump(&mut buf, &ranking, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image_id,strategy,score,rank,selected");
        assert!(lines[1].starts_with("b,avg_entropy,"));
        assert!(lines[1].ends_with(",0,true"));
        assert!(lines[2].ends_with(",1,false"));
    }
}
