//! Seeded synthetic datasets for desk-scale runs.

use serde::{Deserialize, Serialize};

use crate::data::{BBox, DatasetModel, GroundTruthObject, ImageId, ImageRecord};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub categories: usize,
    /// Objects per image drawn uniformly from `[objects_min, objects_max]`.
    pub objects_min: usize,
    pub objects_max: usize,
    /// Box side lengths as fractions of the image side, uniform in the range.
    pub box_min_frac: f64,
    pub box_max_frac: f64,
    pub eval_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            images: 5000,
            width: 500,
            height: 375,
            categories: 20,
            objects_min: 1,
            objects_max: 4,
            box_min_frac: 0.1,
            box_max_frac: 0.6,
            eval_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, value: String, constraint: &str| {
            Err(Error::Config {
                field: field.into(),
                value,
                constraint: constraint.into(),
            })
        };
        if self.categories == 0 {
            return bad("synthetic_categories", "0".into(), "must be >= 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad(
                "synthetic_width/height",
                format!("{}x{}", self.width, self.height),
                "dimensions must be >= 1",
            );
        }
        if self.objects_min > self.objects_max {
            return bad(
                "synthetic_objects_min",
                self.objects_min.to_string(),
                "must be <= synthetic_objects_max",
            );
        }
        if !(self.box_min_frac > 0.0
            && self.box_min_frac <= self.box_max_frac
            && self.box_max_frac <= 1.0)
        {
            return bad(
                "synthetic_box_min_frac",
                format!("{}..{}", self.box_min_frac, self.box_max_frac),
                "need 0 < min <= max <= 1",
            );
        }
        let min_w = self.box_min_frac * self.width as f64;
        let min_h = self.box_min_frac * self.height as f64;
        if min_w < 1.0 || min_h < 1.0 {
            return bad(
                "synthetic_box_min_frac",
                self.box_min_frac.to_string(),
                "smallest box side must be at least 1 pixel",
            );
        }
        let capacity = ((self.width as f64 * self.height as f64) / (min_w * min_h)).floor() as usize;
        if self.objects_max > capacity {
            return bad(
                "synthetic_objects_max",
                self.objects_max.to_string(),
                &format!("at most {capacity} non-degenerate boxes of the minimum size fit in one image"),
            );
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad(
                "eval_fraction",
                self.eval_fraction.to_string(),
                "must lie in [0, 1)",
            );
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        let digits = self.categories.to_string().len().max(2);
        (0..self.categories)
            .map(|c| format!("class_{c:0digits$}"))
            .collect()
    }
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<DatasetModel> {
    spec.validate()?;
    let digits = spec.images.to_string().len().max(6);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let images: Vec<ImageRecord> = (0..spec.images)
        .map(|i| {
            let id = format!("syn_{i:0digits$}");
            let mut rng = StreamKey::new(seed, "synthetic").item(&id).rng();
            let n = rng.int_inclusive(spec.objects_min, spec.objects_max);
            let objects = (0..n)
                .map(|_| {
                    let bw = rng.uniform_range(spec.box_min_frac, spec.box_max_frac) * w;
                    let bh = rng.uniform_range(spec.box_min_frac, spec.box_max_frac) * h;
                    let x0 = rng.uniform_range(0.0, w - bw);
                    let y0 = rng.uniform_range(0.0, h - bh);
                    let category = rng.int_inclusive(0, spec.categories - 1);
                    GroundTruthObject {
                        category,
                        bbox: BBox {
                            xmin: x0,
                            ymin: y0,
                            xmax: (x0 + bw).min(w),
                            ymax: (y0 + bh).min(h),
                        },
                        difficult: false,
                    }
                })
                .collect();
            ImageRecord {
                image_id: ImageId(id),
                width: spec.width,
                height: spec.height,
                objects,
            }
        })
        .collect();
    DatasetModel::new(spec.category_names(), images, Vec::new())?.resplit(spec.eval_fraction, seed)
}
