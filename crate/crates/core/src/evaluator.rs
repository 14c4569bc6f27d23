//! IoU, VOC-protocol average precision and mAP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, ImageId, ImageRecord};
use crate::detector::Prediction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApProtocol {
    /// VOC2007: mean of interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    #[serde(rename = "11point")]
    ElevenPoint,
    /// VOC2010+: area under the monotone precision envelope.
    #[serde(rename = "allpoint")]
    AllPoint,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// Ranked detections of one category with their match outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMatches {
    /// `(confidence, is_true_positive)` in ranking order; ignored detections
    /// (matched to a `difficult` object) are left out.
    pub detections: Vec<(f64, bool)>,
    pub positives: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub per_category: Vec<CategoryMatches>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    /// Categories with at least one non-difficult ground-truth instance.
    pub per_category_ap: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub protocol: ApProtocol,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            protocol: ApProtocol::ElevenPoint,
        }
    }
}

/// Greedy per-category matching in descending confidence order (ties by
/// image id, then box xmin).
pub fn match_detections(
    predictions: &BTreeMap<ImageId, Vec<Prediction>>,
    truth: &[ImageRecord],
    num_categories: usize,
    iou_threshold: f64,
) -> Result<MatchResult> {
    let by_id: BTreeMap<&ImageId, &ImageRecord> = truth.iter().map(|i| (&i.image_id, i)).collect();
    if let Some(unknown) = predictions.keys().find(|id| !by_id.contains_key(id)) {
        return Err(Error::UnknownImage(unknown.clone()));
    }

    let mut result = MatchResult {
        per_category: vec![CategoryMatches::default(); num_categories],
    };
    for img in truth {
        for obj in img.objects.iter().filter(|o| !o.difficult) {
            if let Some(cm) = result.per_category.get_mut(obj.category) {
                cm.positives += 1;
            }
        }
    }

    // (category, confidence, image, box)
    let mut ranked: Vec<(usize, f64, &ImageId, &BBox)> = predictions
        .iter()
        .flat_map(|(id, preds)| preds.iter().map(move |p| (p.top_category(), p.top_prob(), id, &p.bbox)))
        .filter(|(c, ..)| *c < num_categories)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.2.cmp(b.2))
            .then_with(|| a.3.xmin.total_cmp(&b.3.xmin))
    });

    let mut used: BTreeMap<&ImageId, Vec<bool>> = truth
        .iter()
        .map(|i| (&i.image_id, vec![false; i.objects.len()]))
        .collect();
    for (category, confidence, id, bbox) in ranked {
        let img = by_id[id];
        let taken = used.get_mut(id).expect("every truth image has a slot");
        let mut best: Option<(usize, f64)> = None;
        let mut hits_difficult = false;
        for (k, obj) in img.objects.iter().enumerate() {
            if obj.category != category {
                continue;
            }
            let overlap = iou(bbox, &obj.bbox);
            if overlap < iou_threshold {
                continue;
            }
            if obj.difficult {
                hits_difficult = true;
            } else if !taken[k] && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((k, overlap));
            }
        }
        let cm = &mut result.per_category[category];
        match best {
            Some((k, _)) => {
                taken[k] = true;
                cm.detections.push((confidence, true));
            }
            None if hits_difficult => {}
            None => cm.detections.push((confidence, false)),
        }
    }
    Ok(result)
}

/// Average precision from ranked TP/FP flags.
pub fn average_precision(detections: &[(f64, bool)], positives: usize, protocol: ApProtocol) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    // (true positives so far, precision) after each detection
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(detections.len());
    for (k, &(_, is_tp)) in detections.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        curve.push((tp, tp as f64 / (k + 1) as f64));
    }
    match protocol {
        ApProtocol::ElevenPoint => {
            (0..=10usize)
                .map(|i| {
                    // recall >= i/10, compared exactly
                    curve
                        .iter()
                        .filter(|(hits, _)| hits * 10 >= i * positives)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApProtocol::AllPoint => {
            // precision envelope, then sum over recall steps
            let mut envelope: Vec<f64> = curve.iter().map(|(_, p)| *p).collect();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_hits = 0;
            for ((hits, _), p) in curve.iter().zip(&envelope) {
                if *hits > prev_hits {
                    ap += (hits - prev_hits) as f64 / positives as f64 * p;
                    prev_hits = *hits;
                }
            }
            ap
        }
    }
}

pub fn evaluate(
    predictions: &BTreeMap<ImageId, Vec<Prediction>>,
    truth: &[ImageRecord],
    categories: &[String],
    options: EvalOptions,
) -> Result<EvalReport> {
    let matches = match_detections(predictions, truth, categories.len(), options.iou_threshold)?;
    let per_category_ap: BTreeMap<String, f64> = matches
        .per_category
        .iter()
        .zip(categories)
        .filter(|(cm, _)| cm.positives > 0)
        .map(|(cm, name)| {
            (
                name.clone(),
                average_precision(&cm.detections, cm.positives, options.protocol),
            )
        })
        .collect();
    let map = if per_category_ap.is_empty() {
        0.0
    } else {
        per_category_ap.values().sum::<f64>() / per_category_ap.len() as f64
    };
    Ok(EvalReport { map, per_category_ap })
}
