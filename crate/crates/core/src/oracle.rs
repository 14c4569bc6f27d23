//! Weak (center-click) and strong (box) annotation queries with an exact
//! time ledger.
//!
//! Costs are kept in integer deci-seconds: every charge is
//! `78 + 30·b` (weak) or `78 + 345·b` (strong) tenths of a second, so ledger
//! totals are exact and replayable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryId, ImageId, ImageRecord, Point};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

const PER_IMAGE_DS: u64 = 78;
const PER_CLICK_DS: u64 = 30;
const PER_BOX_DS: u64 = 345;

/// A duration in tenths of a second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeciSeconds(pub u64);

impl DeciSeconds {
    pub const ZERO: DeciSeconds = DeciSeconds(0);

    pub fn from_hours(hours: f64) -> Self {
        DeciSeconds((hours * 36_000.0).round().max(0.0) as u64)
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / 10.0
    }

    pub fn hours(self) -> f64 {
        self.0 as f64 / 36_000.0
    }
}

impl Add for DeciSeconds {
    type Output = DeciSeconds;

    fn add(self, rhs: Self) -> Self {
        DeciSeconds(self.0 + rhs.0)
    }
}

impl AddAssign for DeciSeconds {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for DeciSeconds {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(DeciSeconds::ZERO, Add::add)
    }
}

/// Renders exactly, e.g. `76.8`, `0.0`.
impl fmt::Display for DeciSeconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationMode {
    Weak,
    Strong,
}

impl fmt::Display for AnnotationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationMode::Weak => "weak",
            AnnotationMode::Strong => "strong",
        })
    }
}

/// Time to annotate one image holding `object_count` objects.
pub fn annotation_time(mode: AnnotationMode, object_count: usize) -> DeciSeconds {
    let per_object = match mode {
        AnnotationMode::Weak => PER_CLICK_DS,
        AnnotationMode::Strong => PER_BOX_DS,
    };
    DeciSeconds(PER_IMAGE_DS + per_object * object_count as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickAnnotation {
    pub image_id: ImageId,
    pub clicks: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongAnnotation {
    pub image_id: ImageId,
    pub objects: Vec<(CategoryId, BBox)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sequence_no: u64,
    pub episode: u32,
    pub image_id: ImageId,
    pub mode: AnnotationMode,
    pub object_count: usize,
    pub seconds: DeciSeconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLedger {
    entries: Vec<LedgerEntry>,
    cumulative: DeciSeconds,
    budget: DeciSeconds,
}

impl AnnotationLedger {
    pub fn new(budget: DeciSeconds) -> Self {
        Self {
            entries: Vec::new(),
            cumulative: DeciSeconds::ZERO,
            budget,
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn cumulative(&self) -> DeciSeconds {
        self.cumulative
    }

    pub fn budget(&self) -> DeciSeconds {
        self.budget
    }

    pub fn budget_exhausted(&self) -> bool {
        self.cumulative >= self.budget
    }

    pub fn record(
        &mut self,
        episode: u32,
        image_id: &ImageId,
        mode: AnnotationMode,
        object_count: usize,
        seconds: DeciSeconds,
    ) -> &LedgerEntry {
        let sequence_no = self.entries.last().map_or(0, |e| e.sequence_no + 1);
        self.cumulative += seconds;
        self.entries.push(LedgerEntry {
            sequence_no,
            episode,
            image_id: image_id.clone(),
            mode,
            object_count,
            seconds,
        });
        self.entries.last().expect("just pushed")
    }

    /// `sequence_no,episode,image_id,mode,object_count,seconds`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sequence_no", "episode", "image_id", "mode", "object_count", "seconds"])?;
        for e in &self.entries {
            w.write_record([
                e.sequence_no.to_string(),
                e.episode.to_string(),
                e.image_id.to_string(),
                e.mode.to_string(),
                e.object_count.to_string(),
                e.seconds.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("writing ledger csv", e))?;
        Ok(())
    }
}

/// Where annotations come from: ground truth in simulation, or a person.
pub trait AnnotationSource {
    fn clicks(&mut self, image: &ImageRecord) -> Result<Vec<Point>>;
    fn boxes(&mut self, image: &ImageRecord) -> Result<Vec<(CategoryId, BBox)>>;
}

/// Answers from ground truth. Clicks are the box center plus zero-mean
/// Gaussian noise with `sigma = noise_scale * side`, redrawn up to 8 times
/// when they land outside the box and clamped after that.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    pub seed: u64,
    pub noise_scale: f64,
}

const MAX_REDRAWS: usize = 8;

impl SimulatedSource {
    pub fn new(seed: u64, noise_scale: f64) -> Self {
        Self { seed, noise_scale }
    }

    pub fn click_for(&self, image_id: &ImageId, object_index: usize, bbox: &BBox) -> Point {
        let c = bbox.center();
        if self.noise_scale <= 0.0 {
            return c;
        }
        let mut rng = StreamKey::new(self.seed, "click")
            .item(image_id.as_str())
            .index(object_index as u64)
            .rng();
        let (sx, sy) = (self.noise_scale * bbox.width(), self.noise_scale * bbox.height());
        let mut p = c;
        for _ in 0..=MAX_REDRAWS {
            p = Point::new(c.x + rng.gaussian(sx), c.y + rng.gaussian(sy));
            if bbox.contains(&p) {
                return p;
            }
        }
        Point::new(p.x.clamp(bbox.xmin, bbox.xmax), p.y.clamp(bbox.ymin, bbox.ymax))
    }
}

impl AnnotationSource for SimulatedSource {
    fn clicks(&mut self, image: &ImageRecord) -> Result<Vec<Point>> {
        Ok(image
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| self.click_for(&image.image_id, i, &o.bbox))
            .collect())
    }

    fn boxes(&mut self, image: &ImageRecord) -> Result<Vec<(CategoryId, BBox)>> {
        Ok(image.objects.iter().map(|o| (o.category, o.bbox)).collect())
    }
}

/// Serializable oracle state: the ledger plus the annotation caches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleState {
    pub ledger: AnnotationLedger,
    weak: BTreeMap<ImageId, ClickAnnotation>,
    strong: BTreeMap<ImageId, StrongAnnotation>,
}

impl OracleState {
    pub fn new(budget: DeciSeconds) -> Self {
        Self {
            ledger: AnnotationLedger::new(budget),
            weak: BTreeMap::new(),
            strong: BTreeMap::new(),
        }
    }

    pub fn budget_exhausted(&self) -> bool {
        self.ledger.budget_exhausted()
    }

    pub fn cached_clicks(&self, id: &ImageId) -> Option<&ClickAnnotation> {
        self.weak.get(id)
    }

    pub fn cached_boxes(&self, id: &ImageId) -> Option<&StrongAnnotation> {
        self.strong.get(id)
    }

    /// Clicks for `image`. Charged on the first query only; repeats return
    /// the cached clicks and record a zero-cost entry.
    pub fn query_weak(
        &mut self,
        image: &ImageRecord,
        source: &mut dyn AnnotationSource,
        episode: u32,
    ) -> Result<(ClickAnnotation, LedgerEntry)> {
        if let Some(cached) = self.weak.get(&image.image_id) {
            let cached = cached.clone();
            let entry = self
                .ledger
                .record(episode, &image.image_id, AnnotationMode::Weak, cached.clicks.len(), DeciSeconds::ZERO)
                .clone();
            return Ok((cached, entry));
        }
        let clicks = source.clicks(image)?;
        if let Some(p) = clicks.iter().find(|p| !image.contains(p)) {
            return Err(Error::Annotation(format!(
                "click ({}, {}) outside image {}",
                p.x, p.y, image.image_id
            )));
        }
        let ann = ClickAnnotation {
            image_id: image.image_id.clone(),
            clicks,
        };
        let n = ann.clicks.len();
        let entry = self
            .ledger
            .record(episode, &image.image_id, AnnotationMode::Weak, n, annotation_time(AnnotationMode::Weak, n))
            .clone();
        self.weak.insert(image.image_id.clone(), ann.clone());
        Ok((ann, entry))
    }

    /// Boxes for `image`. Existing clicks do not discount the price.
    pub fn query_strong(
        &mut self,
        image: &ImageRecord,
        source: &mut dyn AnnotationSource,
        episode: u32,
    ) -> Result<(StrongAnnotation, LedgerEntry)> {
        self.query_strong_inner(image, source, episode, true)
    }

    /// Strong labels for the initial pool; `charge = false` leaves the
    /// ledger untouched.
    pub fn seed_strong(
        &mut self,
        image: &ImageRecord,
        source: &mut dyn AnnotationSource,
        charge: bool,
    ) -> Result<StrongAnnotation> {
        Ok(self.query_strong_inner(image, source, 0, charge)?.0)
    }

    fn query_strong_inner(
        &mut self,
        image: &ImageRecord,
        source: &mut dyn AnnotationSource,
        episode: u32,
        charge: bool,
    ) -> Result<(StrongAnnotation, LedgerEntry)> {
        if let Some(cached) = self.strong.get(&image.image_id) {
            let cached = cached.clone();
            let entry = self
                .ledger
                .record(episode, &image.image_id, AnnotationMode::Strong, cached.objects.len(), DeciSeconds::ZERO)
                .clone();
            return Ok((cached, entry));
        }
        let objects = source.boxes(image)?;
        let (w, h) = (image.width as f64, image.height as f64);
        for (_, b) in &objects {
            b.validate().map_err(|reason| Error::InvalidBox {
                image_id: image.image_id.to_string(),
                reason,
            })?;
            if !b.within(w, h) {
                return Err(Error::InvalidBox {
                    image_id: image.image_id.to_string(),
                    reason: format!("{b} outside {w}x{h}"),
                });
            }
        }
        let ann = StrongAnnotation {
            image_id: image.image_id.clone(),
            objects,
        };
        let n = ann.objects.len();
        let cost = annotation_time(AnnotationMode::Strong, n);
        let entry = if charge {
            self.ledger
                .record(episode, &image.image_id, AnnotationMode::Strong, n, cost)
                .clone()
        } else {
            LedgerEntry {
                sequence_no: 0,
                episode,
                image_id: image.image_id.clone(),
                mode: AnnotationMode::Strong,
                object_count: n,
                seconds: DeciSeconds::ZERO,
            }
        };
        self.strong.insert(image.image_id.clone(), ann.clone());
        Ok((ann, entry))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruthObject;

    fn image(id: &str, boxes: &[(f64, f64, f64, f64)]) -> ImageRecord {
        ImageRecord {
            image_id: ImageId::new(id),
            width: 100,
            height: 100,
            objects: boxes
                .iter()
                .map(|&(a, b, c, d)| GroundTruthObject {
                    category: 0,
                    bbox: BBox::new(a, b, c, d).unwrap(),
                    difficult: false,
                })
                .collect(),
        }
    }

    #[test]
    fn eq3_costs() {
        assert_eq!(annotation_time(AnnotationMode::Strong, 2).to_string(), "76.8");
        assert_eq!(annotation_time(AnnotationMode::Weak, 5).to_string(), "22.8");
        assert_eq!(annotation_time(AnnotationMode::Strong, 0).to_string(), "7.8");
        assert_eq!(annotation_time(AnnotationMode::Weak, 3), DeciSeconds(168));
    }

    #[test]
    fn budget_boundary() {
        let budget = DeciSeconds::from_hours(35.0);
        assert_eq!(budget, DeciSeconds(1_260_000));
        let mut l = AnnotationLedger::new(budget);
        assert!(!l.budget_exhausted());
        l.record(1, &"a".into(), AnnotationMode::Strong, 0, DeciSeconds(1_259_999));
        assert!(!l.budget_exhausted());
        l.record(1, &"b".into(), AnnotationMode::Weak, 0, DeciSeconds(1));
        assert!(l.budget_exhausted());
    }

    #[test]
    fn zero_noise_click_is_center() {
        let img = image("i", &[(10.0, 10.0, 30.0, 30.0)]);
        let mut src = SimulatedSource::new(1, 0.0);
        assert_eq!(src.clicks(&img).unwrap(), vec![Point::new(20.0, 20.0)]);
    }

    #[test]
    fn weak_cached_on_repeat() {
        let img = image("i", &[(0.0, 0.0, 10.0, 10.0), (5.0, 5.0, 50.0, 50.0), (1.0, 1.0, 2.0, 2.0)]);
        let mut src = SimulatedSource::new(4, 0.1);
        let mut o = OracleState::new(DeciSeconds::from_hours(1.0));
        let (a, e1) = o.query_weak(&img, &mut src, 1).unwrap();
        assert_eq!(e1.seconds.to_string(), "16.8");
        let (b, e2) = o.query_weak(&img, &mut src, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(e2.seconds, DeciSeconds::ZERO);
        assert_eq!(o.ledger.entries().len(), 2);
        assert_eq!(e2.sequence_no, e1.sequence_no + 1);
    }

    #[test]
    fn strong_after_weak_pays_full_price() {
        let img = image("i", &[(0.0, 0.0, 10.0, 10.0), (5.0, 5.0, 50.0, 50.0)]);
        let mut src = SimulatedSource::new(4, 0.1);
        let mut o = OracleState::new(DeciSeconds::from_hours(1.0));
        let (_, w) = o.query_weak(&img, &mut src, 1).unwrap();
        assert_eq!(w.seconds.to_string(), "13.8");
        let (ann, s) = o.query_strong(&img, &mut src, 1).unwrap();
        assert_eq!(s.seconds.to_string(), "76.8");
        assert_eq!(ann.objects.len(), 2);
        assert_eq!(o.ledger.cumulative().to_string(), "90.6");
        let (_, again) = o.query_strong(&img, &mut src, 2).unwrap();
        assert_eq!(again.seconds, DeciSeconds::ZERO);
        assert_eq!(o.ledger.cumulative().to_string(), "90.6");
    }

    #[test]
    fn uncharged_seed_leaves_ledger_empty() {
        let img = image("i", &[(0.0, 0.0, 10.0, 10.0)]);
        let mut src = SimulatedSource::new(0, 0.1);
        let mut o = OracleState::new(DeciSeconds(10));
        o.seed_strong(&img, &mut src, false).unwrap();
        assert!(o.ledger.entries().is_empty());
        assert!(o.cached_boxes(&img.image_id).is_some());
    }

    #[test]
    fn ledger_csv_format() {
        let mut l = AnnotationLedger::new(DeciSeconds(1000));
        l.record(3, &"img".into(), AnnotationMode::Strong, 2, annotation_time(AnnotationMode::Strong, 2));
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sequence_no,episode,image_id,mode,object_count,seconds\n0,3,img,strong,2,76.8\n"
        );
    }

    #[test]
    fn out_of_bounds_source_box_rejected() {
        struct Bad;
        impl AnnotationSource for Bad {
            fn clicks(&mut self, _: &ImageRecord) -> Result<Vec<Point>> {
                Ok(vec![Point::new(500.0, 1.0)])
            }
            fn boxes(&mut self, _: &ImageRecord) -> Result<Vec<(CategoryId, BBox)>> {
                Ok(vec![(0, BBox::new(0.0, 0.0, 101.0, 5.0).unwrap())])
            }
        }
        let img = image("i", &[]);
        let mut o = OracleState::new(DeciSeconds(10));
        assert!(o.query_weak(&img, &mut Bad, 1).is_err());
        assert!(o.query_strong(&img, &mut Bad, 1).is_err());
        assert_eq!(o.ledger.cumulative(), DeciSeconds::ZERO);
    }
}
