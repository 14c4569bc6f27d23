//! Reference implementations and generators shared by the property and
//! acceptance suites. Deliberately naive: they enumerate instead of
//! reusing any library logic.
#![allow(dead_code)]

use std::collections::BTreeMap;

use adasup_core::data::{BBox, GroundTruthObject, ImageId, ImageRecord, Point};
use adasup_core::detector::Prediction;
use adasup_core::evaluator::{ApProtocol, EvalOptions};
use proptest::prelude::*;

pub const W: f64 = 100.0;

pub fn arb_box() -> impl Strategy<Value = BBox> {
    // coarse grid so exact ties and IoU coincidences actually happen
    (0u32..18, 0u32..18, 1u32..8, 1u32..8).prop_map(|(x, y, w, h)| {
        let (x, y) = (x as f64 * 5.0, y as f64 * 5.0);
        BBox::new(x, y, (x + w as f64 * 5.0).min(W), (y + h as f64 * 5.0).min(W)).unwrap()
    })
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub categories: usize,
    pub truth: Vec<ImageRecord>,
    pub predictions: BTreeMap<ImageId, Vec<Prediction>>,
}

pub fn scores_for(category: usize, top: f64, categories: usize) -> Vec<f64> {
    if categories == 1 {
        return vec![1.0];
    }
    let rest = (1.0 - top) / (categories - 1) as f64;
    (0..categories).map(|c| if c == category { top } else { rest }).collect()
}

pub fn arb_instance() -> impl Strategy<Value = Instance> {
    (1usize..=4).prop_flat_map(|categories| {
        let image = (
            prop::collection::vec((0..categories, arb_box()), 0..=5),
            prop::collection::vec((0..categories, arb_box(), 0u32..20), 0..=7),
        );
        prop::collection::vec(image, 1..=10).prop_map(move |images| {
            let mut truth = Vec::new();
            let mut predictions = BTreeMap::new();
            for (i, (objs, preds)) in images.into_iter().enumerate() {
                let id = ImageId::new(format!("img{i:02}"));
                truth.push(ImageRecord {
                    image_id: id.clone(),
                    width: W as u32,
                    height: W as u32,
                    objects: objs
                        .into_iter()
                        .map(|(category, bbox)| GroundTruthObject {
                            category,
                            bbox,
                            difficult: false,
                        })
                        .collect(),
                });
                // top probability stays above every other entry
                let preds = preds
                    .into_iter()
                    .map(|(c, bbox, s)| Prediction {
                        bbox,
                        scores: scores_for(c, 0.55 + 0.02 * s as f64, categories),
                    })
                    .collect();
                predictions.insert(id, preds);
            }
            Instance {
                categories,
                truth,
                predictions,
            }
        })
    })
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    let union = (a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Enumerates every prefix of the ranked detections and applies the
/// 11-point rule to the resulting precision/recall pairs.
pub fn brute_force_map(inst: &Instance) -> f64 {
    let mut aps = Vec::new();
    for cat in 0..inst.categories {
        let positives: usize = inst
            .truth
            .iter()
            .map(|img| img.objects.iter().filter(|o| o.category == cat).count())
            .sum();
        if positives == 0 {
            continue;
        }
        let mut dets: Vec<(f64, &ImageId, BBox)> = inst
            .predictions
            .iter()
            .flat_map(|(id, ps)| {
                ps.iter()
                    .filter(|p| argmax(&p.scores) == cat)
                    .map(move |p| (p.scores[cat], id, p.bbox))
            })
            .collect();
        dets.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(b.1))
                .then_with(|| a.2.xmin.partial_cmp(&b.2.xmin).unwrap())
        });
        let mut used: BTreeMap<(&ImageId, usize), bool> = BTreeMap::new();
        let mut hits = Vec::new();
        for (_, id, bbox) in &dets {
            let img = inst.truth.iter().find(|i| &i.image_id == *id).unwrap();
            let mut best: Option<(usize, f64)> = None;
            for (j, o) in img.objects.iter().enumerate() {
                if o.category != cat || used.contains_key(&(*id, j)) {
                    continue;
                }
                let v = oracle_iou(bbox, &o.bbox);
                if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    used.insert((*id, j), true);
                    hits.push(true);
                }
                None => hits.push(false),
            }
        }
        let prefixes: Vec<(usize, usize)> = (1..=hits.len())
            .map(|k| (hits[..k].iter().filter(|&&h| h).count(), k))
            .collect();
        let mut ap = 0.0;
        for r in 0..=10 {
            let p = prefixes
                .iter()
                .filter(|(tp, _)| tp * 10 >= r * positives)
                .map(|&(tp, k)| tp as f64 / k as f64)
                .fold(0.0, f64::max);
            ap += p / 11.0;
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

pub fn opts() -> EvalOptions {
    EvalOptions {
        iou_threshold: 0.5,
        protocol: ApProtocol::ElevenPoint,
    }
}

pub fn arb_predictions() -> impl Strategy<Value = Vec<Prediction>> {
    prop::collection::vec((arb_box(), 0usize..3, 0u32..20), 0..=6).prop_map(|v| {
        v.into_iter()
            .map(|(bbox, c, s)| Prediction {
                bbox,
                scores: scores_for(c, 0.4 + 0.03 * s as f64, 3),
            })
            .collect()
    })
}

/// Exhaustive nearest-center matching: each click takes the prediction
/// whose box center is closest, first index on ties. Returns
/// `(box, category, click)` per click and the mean top score.
pub fn nearest_center_labels(preds: &[Prediction], clicks: &[Point]) -> (Vec<(BBox, usize, Point)>, f64) {
    if preds.is_empty() || clicks.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mut out = Vec::new();
    let mut total = 0.0;
    for click in clicks {
        let d: Vec<f64> = preds
            .iter()
            .map(|p| {
                let cx = (p.bbox.xmin + p.bbox.xmax) / 2.0;
                let cy = (p.bbox.ymin + p.bbox.ymax) / 2.0;
                (cx - click.x).powi(2) + (cy - click.y).powi(2)
            })
            .collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = d.iter().position(|&x| x == min).unwrap();
        out.push((preds[first].bbox, argmax(&preds[first].scores), *click));
        total += preds[first].scores.iter().cloned().fold(0.0, f64::max);
    }
    let n = out.len() as f64;
    (out, total / n)
}
