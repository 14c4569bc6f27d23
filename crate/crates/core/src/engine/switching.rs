//! Pseudo-labeling from clicks and the two supervision switches.

use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryId, ImageId, Point};
use crate::detector::Prediction;
use crate::oracle::ClickAnnotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: CategoryId,
    pub source_click: Point,
    pub chosen_prob: f64,
}

/// For every click, the prediction whose box center is nearest (ties to the
/// lower index). Returns the labels and the image confidence `c`, the mean
/// `top_prob` of the chosen predictions (0 when nothing was chosen).
pub fn pseudo_label(predictions: &[Prediction], clicks: &ClickAnnotation) -> (Vec<PseudoLabel>, f64) {
    if predictions.is_empty() || clicks.clicks.is_empty() {
        return (Vec::new(), 0.0);
    }
    let centers: Vec<Point> = predictions.iter().map(|p| p.bbox.center()).collect();
    let labels: Vec<PseudoLabel> = clicks
        .clicks
        .iter()
        .map(|click| {
            let mut best = 0;
            let mut best_d = centers[0].dist2(click);
            for (i, c) in centers.iter().enumerate().skip(1) {
                let d = c.dist2(click);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            let chosen = &predictions[best];
            PseudoLabel {
                image_id: clicks.image_id.clone(),
                bbox: chosen.bbox,
                category: chosen.top_category(),
                source_click: *click,
                chosen_prob: chosen.top_prob(),
            }
        })
        .collect();
    let confidence = labels.iter().map(|l| l.chosen_prob).sum::<f64>() / labels.len() as f64;
    (labels, confidence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftDecision {
    StrongQuery,
    PseudoLabel,
}

/// Strong query iff `confidence < delta`, strictly.
pub fn soft_switch(confidence: f64, delta: f64) -> SoftDecision {
    if confidence < delta {
        SoftDecision::StrongQuery
    } else {
        SoftDecision::PseudoLabel
    }
}

/// `d_n = map[n] - map[n-1]` and `d_max`, the largest consecutive
/// difference in the history. `None` with fewer than two entries.
pub fn gain_terms(history: &[f64]) -> Option<(f64, f64)> {
    if history.len() < 2 {
        return None;
    }
    let diffs = history.windows(2).map(|w| w[1] - w[0]);
    let d_max = diffs.clone().fold(f64::NEG_INFINITY, f64::max);
    let n = history.len();
    let d_n = history[n - 1] - history[n - 2];
    Some((d_n, d_max))
}

/// Fires when the latest gain is at most `gamma` of the best gain so far.
/// A history whose best gain is not positive fires as well.
pub fn hard_switch(history: &[f64], gamma: f64) -> bool {
    match gain_terms(history) {
        None => false,
        Some((_, d_max)) if d_max <= 0.0 => true,
        Some((d_n, d_max)) => d_n / d_max <= gamma,
    }
}
