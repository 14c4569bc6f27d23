//! Dataset model: boxes, images, category registry and the JSON snapshot.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "adasup-dataset/1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl ImageId {
    pub fn new(id: impl Into<String>) -> Self {
        ImageId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_owned())
    }
}

/// Index into the dataset's sorted category registry.
pub type CategoryId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned box in pixel coordinates, `xmin < xmax` and `ymin < ymax`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> std::result::Result<Self, String> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all_finite = [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(format!("non-finite coordinate in {self}"));
        }
        if self.xmin >= self.xmax {
            return Err(format!("xmin {} >= xmax {}", self.xmin, self.xmax));
        }
        if self.ymin >= self.ymax {
            return Err(format!("ymin {} >= ymax {}", self.ymin, self.ymax));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Clamp to `[0, width] x [0, height]`. Returns `None` when nothing of
    /// positive area remains.
    pub fn clamped(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox {
            xmin: self.xmin.clamp(0.0, width),
            ymin: self.ymin.clamp(0.0, height),
            xmax: self.xmax.clamp(0.0, width),
            ymax: self.ymax.clamp(0.0, height),
        };
        b.validate().ok().map(|_| b)
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.xmin >= 0.0 && self.ymin >= 0.0 && self.xmax <= width && self.ymax <= height
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.xmin, self.ymin, self.xmax, self.ymax
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub category: CategoryId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruthObject>,
}

impl ImageRecord {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetSnapshot", into = "DatasetSnapshot")]
pub struct DatasetModel {
    pub categories: Vec<String>,
    pub train_images: Vec<ImageRecord>,
    pub eval_images: Vec<ImageRecord>,
    index: HashMap<ImageId, (Split, usize)>,
}

impl DatasetModel {
    pub fn new(
        categories: Vec<String>,
        train_images: Vec<ImageRecord>,
        eval_images: Vec<ImageRecord>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(train_images.len() + eval_images.len());
        for (split, images) in [(Split::Train, &train_images), (Split::Eval, &eval_images)] {
            for (i, img) in images.iter().enumerate() {
                if index.insert(img.image_id.clone(), (split, i)).is_some() {
                    return Err(Error::Dataset(format!(
                        "duplicate image id {}",
                        img.image_id
                    )));
                }
                for obj in &img.objects {
                    if obj.category >= categories.len() {
                        return Err(Error::Dataset(format!(
                            "image {}: category index {} not registered",
                            img.image_id, obj.category
                        )));
                    }
                    obj.bbox
                        .validate()
                        .map_err(|reason| Error::InvalidBox {
                            image_id: img.image_id.to_string(),
                            reason,
                        })?;
                    if !obj.bbox.within(img.width as f64, img.height as f64) {
                        return Err(Error::InvalidBox {
                            image_id: img.image_id.to_string(),
                            reason: format!("{} outside {}x{}", obj.bbox, img.width, img.height),
                        });
                    }
                }
            }
        }
        if categories.is_empty() && !index.is_empty() {
            return Err(Error::Dataset("empty category registry".into()));
        }
        Ok(Self {
            categories,
            train_images,
            eval_images,
            index,
        })
    }

    pub fn empty() -> Self {
        Self {
            categories: Vec::new(),
            train_images: Vec::new(),
            eval_images: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_images(&self) -> usize {
        self.train_images.len() + self.eval_images.len()
    }

    pub fn image(&self, id: &ImageId) -> Result<&ImageRecord> {
        match self.index.get(id) {
            Some((Split::Train, i)) => Ok(&self.train_images[*i]),
            Some((Split::Eval, i)) => Ok(&self.eval_images[*i]),
            None => Err(Error::UnknownImage(id.clone())),
        }
    }

    pub fn split_of(&self, id: &ImageId) -> Option<Split> {
        self.index.get(id).map(|(s, _)| *s)
    }

    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.categories.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    pub fn train_ids(&self) -> BTreeSet<ImageId> {
        self.train_images.iter().map(|i| i.image_id.clone()).collect()
    }

    /// Re-split all images: a seeded random `eval_fraction` of them goes to
    /// the eval split. Used for sources that carry no split of their own.
    pub fn resplit(self, eval_fraction: f64, seed: u64) -> Result<Self> {
        let mut all: Vec<ImageRecord> = self
            .train_images
            .into_iter()
            .chain(self.eval_images)
            .collect();
        all.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let n_eval = (all.len() as f64 * eval_fraction).round() as usize;
        let mut keyed: Vec<(u64, ImageRecord)> = all
            .into_iter()
            .map(|img| {
                let k = crate::rng::StreamKey::new(seed, "split")
                    .item(img.image_id.as_str())
                    .rng()
                    .next_u64();
                (k, img)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.image_id.cmp(&b.1.image_id)));
        let mut eval: Vec<ImageRecord> = Vec::with_capacity(n_eval);
        let mut train = Vec::with_capacity(keyed.len() - n_eval);
        for (i, (_, img)) in keyed.into_iter().enumerate() {
            if i < n_eval {
                eval.push(img);
            } else {
                train.push(img);
            }
        }
        train.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        eval.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        DatasetModel::new(self.categories, train, eval)
    }

    pub fn to_snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_snapshot_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot_json()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_snapshot_json(&s)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetSnapshot {
    schema: String,
    categories: Vec<String>,
    train_images: Vec<ImageRecord>,
    eval_images: Vec<ImageRecord>,
}

impl TryFrom<DatasetSnapshot> for DatasetModel {
    type Error = Error;

    fn try_from(s: DatasetSnapshot) -> Result<Self> {
        if s.schema != DATASET_SCHEMA {
            return Err(Error::Dataset(format!(
                "unsupported snapshot schema {:?}, expected {DATASET_SCHEMA:?}",
                s.schema
            )));
        }
        DatasetModel::new(s.categories, s.train_images, s.eval_images)
    }
}

impl From<DatasetModel> for DatasetSnapshot {
    fn from(d: DatasetModel) -> Self {
        DatasetSnapshot {
            schema: DATASET_SCHEMA.to_owned(),
            categories: d.categories,
            train_images: d.train_images,
            eval_images: d.eval_images,
        }
    }
}
