//! The detector interface and a deterministic surrogate.
//!
//! The surrogate has a single quality scalar
//! `q = q_min + (1 - q_min)(1 - exp(-(n_strong + alpha * n_pseudo) / tau))`
//! that scales every noise channel of its predictions by `1 - q`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryId, ImageId, ImageRecord};
use crate::engine::PseudoLabel;
use crate::error::{Error, Result};
use crate::oracle::StrongAnnotation;
use crate::rng::StreamKey;

pub mod external;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Argmax of the scores; ties go to the lowest category index.
    pub fn top_category(&self) -> CategoryId {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn top_prob(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    pub fn second_prob(&self) -> f64 {
        let top = self.top_category();
        self.scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != top)
            .map(|(_, &s)| s)
            .fold(0.0, f64::max)
    }

    pub fn margin(&self) -> f64 {
        self.top_prob() - self.second_prob()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .scores
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn validate(&self, num_categories: usize) -> std::result::Result<(), String> {
        self.bbox.validate()?;
        if self.scores.len() != num_categories {
            return Err(format!(
                "{} scores for {num_categories} categories",
                self.scores.len()
            ));
        }
        if self.scores.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err("negative or NaN score".into());
        }
        let sum: f64 = self.scores.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("scores sum to {sum}"));
        }
        Ok(())
    }
}

/// Determines the noise stream of one prediction call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextKey {
    pub seed: u64,
    pub episode: u32,
    pub image_id: ImageId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCorpus {
    strong: BTreeMap<ImageId, StrongAnnotation>,
    pseudo: BTreeMap<ImageId, Vec<PseudoLabel>>,
}

impl TrainingCorpus {
    pub fn n_strong(&self) -> usize {
        self.strong.len()
    }

    pub fn n_pseudo(&self) -> usize {
        self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strong.is_empty() && self.pseudo.is_empty()
    }

    pub fn strong_items(&self) -> &BTreeMap<ImageId, StrongAnnotation> {
        &self.strong
    }

    pub fn pseudo_items(&self) -> &BTreeMap<ImageId, Vec<PseudoLabel>> {
        &self.pseudo
    }

    /// Strong labels supersede any pseudo labels of the same image.
    pub fn insert_strong(&mut self, ann: StrongAnnotation) {
        self.pseudo.remove(&ann.image_id);
        self.strong.insert(ann.image_id.clone(), ann);
    }

    /// Replaces earlier pseudo labels of the image.
    pub fn set_pseudo(&mut self, image_id: ImageId, labels: Vec<PseudoLabel>) -> Result<()> {
        if self.strong.contains_key(&image_id) {
            return Err(Error::PoolInvariant(format!(
                "image {image_id} already strongly labeled, cannot pseudo-label"
            )));
        }
        self.pseudo.insert(image_id, labels);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub q_min: f64,
    /// Saturation scale; `None` means an eighth of the train split.
    pub tau: Option<f64>,
    pub alpha: f64,
    pub miss_rate: f64,
    pub jitter: f64,
    pub false_positive_rate: f64,
    pub label_confusion: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            q_min: 0.3,
            tau: None,
            alpha: 0.5,
            miss_rate: 0.5,
            jitter: 0.25,
            false_positive_rate: 1.0,
            label_confusion: 0.5,
        }
    }
}

impl SurrogateParams {
    pub fn effective_tau(&self, train_size: usize) -> f64 {
        self.tau.unwrap_or(train_size as f64 / 8.0).max(f64::MIN_POSITIVE)
    }

    pub fn quality(&self, n_strong: usize, n_pseudo: usize, tau: f64) -> f64 {
        let effective = n_strong as f64 + self.alpha * n_pseudo as f64;
        self.q_min + (1.0 - self.q_min) * (1.0 - (-effective / tau).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub quality: f64,
    pub n_strong: usize,
    pub n_pseudo: usize,
    pub tau: f64,
    pub params: SurrogateParams,
}

impl DetectorState {
    /// A state with a fixed quality, bypassing the corpus.
    pub fn with_quality(quality: f64, params: SurrogateParams) -> Self {
        Self {
            quality: quality.clamp(0.0, 1.0),
            n_strong: 0,
            n_pseudo: 0,
            tau: params.tau.unwrap_or(1.0),
            params,
        }
    }
}

pub fn train(corpus: &TrainingCorpus, params: &SurrogateParams, train_size: usize) -> Result<DetectorState> {
    if corpus.is_empty() {
        return Err(Error::Detector("cannot train on an empty corpus".into()));
    }
    let tau = params.effective_tau(train_size);
    Ok(DetectorState {
        quality: params.quality(corpus.n_strong(), corpus.n_pseudo(), tau),
        n_strong: corpus.n_strong(),
        n_pseudo: corpus.n_pseudo(),
        tau,
        params: params.clone(),
    })
}

/// Noisy detections of `image`'s ground truth; a pure function of its inputs.
pub fn predict(state: &DetectorState, image: &ImageRecord, num_categories: usize, ctx: &ContextKey) -> Vec<Prediction> {
    let q = state.quality;
    let p = &state.params;
    let slack = 1.0 - q;
    let (w, h) = (image.width as f64, image.height as f64);
    let key = StreamKey::new(ctx.seed, "predict")
        .episode(ctx.episode as u64)
        .item(ctx.image_id.as_str());

    let mut out = Vec::with_capacity(image.objects.len() + 1);
    for (i, obj) in image.objects.iter().enumerate() {
        // fixed draw order per object so outcomes couple across quality levels
        let mut rng = key.index(i as u64).rng();
        let u_miss = rng.uniform();
        let z: [f64; 4] = std::array::from_fn(|_| rng.gaussian(1.0));
        let u_conf = rng.uniform();
        let mass: Vec<f64> = (0..num_categories).map(|_| rng.exp1()).collect();

        if u_miss < p.miss_rate * slack {
            continue;
        }
        let b = obj.bbox;
        let sx = p.jitter * slack * b.width();
        let sy = p.jitter * slack * b.height();
        let bbox = sanitize_box(
            b.xmin + z[0] * sx,
            b.ymin + z[1] * sy,
            b.xmax + z[2] * sx,
            b.ymax + z[3] * sy,
            w,
            h,
        );
        let floor = 1.0 / num_categories as f64;
        let p_true = (0.5 + 0.5 * q - p.label_confusion * slack * u_conf).clamp(floor, 1.0);
        out.push(Prediction {
            bbox,
            scores: spread(obj.category, p_true, &mass),
        });
    }

    let mut rng = key.index(u64::MAX).rng();
    let n_fp = rng.poisson(p.false_positive_rate * slack);
    for _ in 0..n_fp {
        let bw = rng.uniform_range(0.1, 0.5) * w;
        let bh = rng.uniform_range(0.1, 0.5) * h;
        let x0 = rng.uniform_range(0.0, w - bw);
        let y0 = rng.uniform_range(0.0, h - bh);
        let raw: Vec<f64> = (0..num_categories).map(|_| 1.0 + 0.1 * rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        out.push(Prediction {
            bbox: sanitize_box(x0, y0, x0 + bw, y0 + bh, w, h),
            scores: raw.into_iter().map(|s| s / total).collect(),
        });
    }

    out.sort_by(|a, b| {
        b.top_prob()
            .total_cmp(&a.top_prob())
            .then_with(|| a.bbox.xmin.total_cmp(&b.bbox.xmin))
            .then_with(|| a.bbox.ymin.total_cmp(&b.bbox.ymin))
    });
    out
}

/// `p_true` on `truth`, the remainder split over the other categories in
/// proportion to `mass`.
fn spread(truth: CategoryId, p_true: f64, mass: &[f64]) -> Vec<f64> {
    let n = mass.len();
    if n == 1 {
        return vec![1.0];
    }
    let rest = 1.0 - p_true;
    let other: f64 = mass.iter().enumerate().filter(|(i, _)| *i != truth).map(|(_, m)| m).sum();
    let mut scores: Vec<f64> = mass
        .iter()
        .enumerate()
        .map(|(i, m)| if i == truth { p_true } else { rest * m / other })
        .collect();
    let total: f64 = scores.iter().sum();
    for s in &mut scores {
        *s /= total;
    }
    scores
}

/// Orders and clamps corners into the image, widening to at least one pixel.
fn sanitize_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> BBox {
    let (xmin, xmax) = axis(x0, x1, w);
    let (ymin, ymax) = axis(y0, y1, h);
    BBox {
        xmin,
        ymin,
        xmax,
        ymax,
    }
}

fn axis(a: f64, b: f64, limit: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (a.min(b).clamp(0.0, limit), a.max(b).clamp(0.0, limit));
    let min_side = 1.0_f64.min(limit);
    if hi - lo < min_side {
        let c = ((lo + hi) / 2.0).clamp(min_side / 2.0, limit - min_side / 2.0);
        lo = c - min_side / 2.0;
        hi = c + min_side / 2.0;
    }
    (lo, hi)
}

/// The detector `M` as seen by the loop.
pub trait Detector: Send + Sync {
    fn train(&mut self, corpus: &TrainingCorpus, episode: u32) -> Result<()>;

    fn predict(&self, image: &ImageRecord, ctx: &ContextKey) -> Result<Vec<Prediction>>;

    /// JSON snapshot for run persistence.
    fn snapshot(&self) -> serde_json::Value;
}

#[derive(Debug, Clone)]
pub struct SurrogateDetector {
    params: SurrogateParams,
    train_size: usize,
    num_categories: usize,
    state: Option<DetectorState>,
}

impl SurrogateDetector {
    pub fn new(params: SurrogateParams, train_size: usize, num_categories: usize) -> Self {
        Self {
            params,
            train_size,
            num_categories,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&DetectorState> {
        self.state.as_ref()
    }
}

impl Detector for SurrogateDetector {
    fn train(&mut self, corpus: &TrainingCorpus, _episode: u32) -> Result<()> {
        self.state = Some(train(corpus, &self.params, self.train_size)?);
        Ok(())
    }

    fn predict(&self, image: &ImageRecord, ctx: &ContextKey) -> Result<Vec<Prediction>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Detector("predict called before train".into()))?;
        Ok(predict(state, image, self.num_categories, ctx))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).unwrap_or(serde_json::Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruthObject;

    fn pred(scores: &[f64]) -> Prediction {
        Prediction {
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            scores: scores.to_vec(),
        }
    }

    fn two_object_image() -> ImageRecord {
        ImageRecord {
            image_id: ImageId::new("img"),
            width: 200,
            height: 100,
            objects: vec![
                GroundTruthObject {
                    category: 1,
                    bbox: BBox::new(10.0, 10.0, 60.0, 50.0).unwrap(),
                    difficult: false,
                },
                GroundTruthObject {
                    category: 2,
                    bbox: BBox::new(100.0, 20.0, 190.0, 90.0).unwrap(),
                    difficult: false,
                },
            ],
        }
    }

    fn ctx() -> ContextKey {
        ContextKey {
            seed: 11,
            episode: 2,
            image_id: ImageId::new("img"),
        }
    }

    #[test]
    fn accessors() {
        let p = pred(&[0.2, 0.7, 0.1]);
        assert_eq!(p.top_category(), 1);
        assert!((p.margin() - 0.5).abs() < 1e-12);
        let tie = pred(&[0.5, 0.5]);
        assert_eq!(tie.top_category(), 0);
        assert_eq!(tie.margin(), 0.0);
        assert!((tie.entropy() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(pred(&[1.0, 0.0, 0.0]).entropy(), 0.0);
    }

    #[test]
    fn quality_formula() {
        let p = SurrogateParams {
            q_min: 0.1,
            tau: Some(300.0),
            ..SurrogateParams::default()
        };
        assert_eq!(p.quality(0, 0, 300.0), 0.1);
        let q = p.quality(300, 0, 300.0);
        assert!((q - (0.1 + 0.9 * (1.0 - (-1.0f64).exp()))).abs() < 1e-12);
        assert!((q - 0.6689).abs() < 1e-4);
        assert!(p.quality(1_000_000, 0, 300.0) > 0.999_999);
        // pseudo labels count at weight alpha
        assert_eq!(p.quality(0, 200, 300.0), p.quality(100, 0, 300.0));
    }

    #[test]
    fn empty_corpus_cannot_train() {
        assert!(train(&TrainingCorpus::default(), &SurrogateParams::default(), 10).is_err());
    }

    #[test]
    fn perfect_quality_reproduces_truth() {
        let img = two_object_image();
        let state = DetectorState::with_quality(1.0, SurrogateParams::default());
        let out = predict(&state, &img, 3, &ctx());
        assert_eq!(out.len(), 2);
        for obj in &img.objects {
            let m = out.iter().find(|p| p.bbox == obj.bbox).expect("exact box");
            assert_eq!(m.top_category(), obj.category);
            assert_eq!(m.top_prob(), 1.0);
        }
    }

    #[test]
    fn predict_is_pure() {
        let img = two_object_image();
        let state = DetectorState::with_quality(0.3, SurrogateParams::default());
        assert_eq!(predict(&state, &img, 3, &ctx()), predict(&state, &img, 3, &ctx()));
        let other = ContextKey { episode: 3, ..ctx() };
        assert_ne!(predict(&state, &img, 3, &ctx()), predict(&state, &img, 3, &other));
    }

    #[test]
    fn scores_are_distributions() {
        let img = two_object_image();
        for q in [0.0, 0.1, 0.5, 0.9] {
            let state = DetectorState::with_quality(q, SurrogateParams::default());
            for e in 0..30 {
                let c = ContextKey { episode: e, ..ctx() };
                for p in predict(&state, &img, 3, &c) {
                    p.validate(3).unwrap();
                    assert!(p.bbox.within(200.0, 100.0));
                }
            }
        }
    }

    #[test]
    fn single_category_scores() {
        let mut img = two_object_image();
        for o in &mut img.objects {
            o.category = 0;
        }
        let state = DetectorState::with_quality(0.2, SurrogateParams::default());
        for p in predict(&state, &img, 1, &ctx()) {
            assert_eq!(p.scores, vec![1.0]);
        }
    }

    #[test]
    fn golden_low_quality_fixture() {
        let img = two_object_image();
        let state = DetectorState::with_quality(0.1, SurrogateParams::default());
        let out = predict(&state, &img, 3, &ctx());
        let summary: Vec<(usize, [i64; 4], i64)> = out
            .iter()
            .map(|p| {
                (
                    p.top_category(),
                    [p.bbox.xmin, p.bbox.ymin, p.bbox.xmax, p.bbox.ymax].map(|v| (v * 1000.0).round() as i64),
                    (p.top_prob() * 1e6).round() as i64,
                )
            })
            .collect();
        assert_eq!(summary, GOLDEN, "golden prediction fixture drifted");
    }

    // Captured from the generator; any change to draw order shows up here.
    const GOLDEN: &[(usize, [i64; 4], i64)] = &[
        (0, [124403, 14794, 200000, 62508], 498605),
        (0, [484, 5389, 88481, 51835], 337688),
    ];

    #[test]
    fn sanitize_keeps_boxes_valid() {
        let b = sanitize_box(50.0, 5.0, 49.9, -3.0, 100.0, 100.0);
        b.validate().unwrap();
        assert!(b.within(100.0, 100.0));
        let edge = sanitize_box(150.0, 0.0, 160.0, 10.0, 100.0, 100.0);
        edge.validate().unwrap();
        assert!(edge.within(100.0, 100.0));
    }
}
