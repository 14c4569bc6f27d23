//! PASCAL VOC XML annotation ingestion.
//!
//! One `<annotation>` file per image. Only `<size>`, `<object>/<name>`,
//! `<object>/<difficult>` and `<object>/<bndbox>` are read; any other
//! element is ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::warn;

use crate::data::{BBox, DatasetModel, GroundTruthObject, ImageId, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub enum CategoryPolicy {
    /// Registry is the sorted set of names found in the files.
    #[default]
    Collect,
    /// Registry is fixed up front (sorted on use); unknown names are errors.
    Fixed(Vec<String>),
}

#[derive(Debug)]
pub struct Ingested {
    pub dataset: DatasetModel,
    pub warnings: Vec<String>,
}

struct RawObject {
    name: String,
    bbox: [f64; 4],
    difficult: bool,
}

struct RawImage {
    image_id: ImageId,
    width: u32,
    height: u32,
    objects: Vec<RawObject>,
}

/// Ingest every `*.xml` file in `dir` (non-recursive, sorted by file name).
/// All images land in the train split; callers re-split as configured.
pub fn ingest_voc_annotations(dir: &Path, policy: &CategoryPolicy) -> Result<Ingested> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    files.sort();

    let mut raws = Vec::with_capacity(files.len());
    for path in &files {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        raws.push(parse_annotation(path, &text)?);
    }

    let categories: Vec<String> = match policy {
        CategoryPolicy::Collect => raws
            .iter()
            .flat_map(|r| r.objects.iter().map(|o| o.name.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        CategoryPolicy::Fixed(names) => {
            let set: BTreeSet<String> = names.iter().cloned().collect();
            set.into_iter().collect()
        }
    };

    let mut warnings = Vec::new();
    let mut images = Vec::with_capacity(raws.len());
    for raw in raws {
        let mut objects = Vec::with_capacity(raw.objects.len());
        for obj in raw.objects {
            let category = categories
                .binary_search(&obj.name)
                .map_err(|_| Error::UnknownCategory(obj.name.clone()))?;
            let [xmin, ymin, xmax, ymax] = obj.bbox;
            let original = BBox {
                xmin,
                ymin,
                xmax,
                ymax,
            };
            original.validate().map_err(|reason| Error::InvalidBox {
                image_id: raw.image_id.to_string(),
                reason,
            })?;
            let (w, h) = (raw.width as f64, raw.height as f64);
            let bbox = original.clamped(w, h).ok_or_else(|| Error::InvalidBox {
                image_id: raw.image_id.to_string(),
                reason: format!("{original} is degenerate after clamping to {w}x{h}"),
            })?;
            if bbox != original {
                let msg = format!(
                    "image {}: box {original} clamped to {bbox} ({}x{})",
                    raw.image_id, raw.width, raw.height
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            objects.push(GroundTruthObject {
                category,
                bbox,
                difficult: obj.difficult,
            });
        }
        images.push(ImageRecord {
            image_id: raw.image_id,
            width: raw.width,
            height: raw.height,
            objects,
        });
    }

    let dataset = DatasetModel::new(categories, images, Vec::new())?;
    Ok(Ingested { dataset, warnings })
}

fn parse_annotation(path: &Path, text: &str) -> Result<RawImage> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Xml {
        path: path.to_owned(),
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::MissingElement {
            path: path.to_owned(),
            element: "annotation".into(),
        });
    }
    let missing = |element: &str| Error::MissingElement {
        path: path.to_owned(),
        element: element.to_owned(),
    };

    let size = child(root, "size").ok_or_else(|| missing("size"))?;
    let width: u32 = child_text(size, "width")
        .and_then(|t| parse_number(t).map(|v| v as u32))
        .filter(|w| *w > 0)
        .ok_or_else(|| missing("size/width"))?;
    let height: u32 = child_text(size, "height")
        .and_then(|t| parse_number(t).map(|v| v as u32))
        .filter(|h| *h > 0)
        .ok_or_else(|| missing("size/height"))?;

    let image_id = path
        .file_stem()
        .map(|s| ImageId::new(s.to_string_lossy()))
        .ok_or_else(|| missing("filename"))?;

    let mut objects = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let name = child_text(obj, "name")
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| missing("object/name"))?;
        let difficult = child_text(obj, "difficult")
            .map(|t| t.trim() == "1")
            .unwrap_or(false);
        let bndbox = child(obj, "bndbox").ok_or_else(|| missing("object/bndbox"))?;
        let mut coords = [0.0; 4];
        for (slot, tag) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            *slot = child_text(bndbox, tag)
                .and_then(parse_number)
                .ok_or_else(|| missing(&format!("bndbox/{tag}")))?;
        }
        objects.push(RawObject {
            name,
            bbox: coords,
            difficult,
        });
    }

    Ok(RawImage {
        image_id,
        width,
        height,
        objects,
    })
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(tag))
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, tag: &str) -> Option<&'a str> {
    child(node, tag).and_then(|n| n.text())
}

// VOC writes integers, but some exporters emit "48.0".
fn parse_number(t: &str) -> Option<f64> {
    t.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    const DOG: &str = r#"<annotation>
  <folder>VOC2007</folder>
  <filename>000001.jpg</filename>
  <size><width>500</width><height>375</height><depth>3</depth></size>
  <object>
    <name>dog</name><pose>Left</pose><truncated>1</truncated><difficult>0</difficult>
    <bndbox><xmin>48</xmin><ymin>240</ymin><xmax>195</xmax><ymax>371</ymax></bndbox>
  </object>
</annotation>"#;

    #[test]
    fn single_object_transcribed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "000001.xml", DOG);
        let out = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        let d = out.dataset;
        assert_eq!(d.categories, vec!["dog".to_string()]);
        assert_eq!(d.train_images.len(), 1);
        let img = &d.train_images[0];
        assert_eq!(img.image_id.as_str(), "000001");
        assert_eq!((img.width, img.height), (500, 375));
        assert_eq!(img.objects.len(), 1);
        assert_eq!(img.objects[0].bbox, BBox::new(48.0, 240.0, 195.0, 371.0).unwrap());
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn empty_directory_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let out = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        assert_eq!(out.dataset.num_images(), 0);
        assert!(out.dataset.categories.is_empty());
    }

    #[test]
    fn overflowing_box_is_clamped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.xml", &DOG.replace("<xmax>195</xmax>", "<xmax>501</xmax>"));
        let out = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        assert_eq!(out.dataset.train_images[0].objects[0].bbox.xmax, 500.0);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("clamped"));
    }

    #[test]
    fn inverted_box_rejected_naming_image() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "bad7.xml", &DOG.replace("<xmin>48</xmin>", "<xmin>300</xmin>"));
        let err = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap_err();
        assert!(matches!(err, Error::InvalidBox { ref image_id, .. } if image_id == "bad7"));
    }

    #[test]
    fn malformed_xml_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "broken.xml", "<annotation>\n<size>\n<width>5</width>\n</annotation>");
        let err = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken.xml"), "{msg}");
        match err {
            Error::Xml { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn difficult_retained_and_marked() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.xml", &DOG.replace("<difficult>0</difficult>", "<difficult>1</difficult>"));
        let out = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        assert!(out.dataset.train_images[0].objects[0].difficult);
    }

    #[test]
    fn categories_sorted_and_ingestion_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1.xml", DOG);
        write(dir.path(), "2.xml", &DOG.replace("<name>dog</name>", "<name>cat</name>"));
        let a = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        let b = ingest_voc_annotations(dir.path(), &CategoryPolicy::Collect).unwrap();
        assert_eq!(a.dataset.categories, vec!["cat".to_string(), "dog".to_string()]);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.train_images[0].objects[0].category, 1);
    }

    #[test]
    fn fixed_registry_rejects_unknown_name() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1.xml", DOG);
        let err = ingest_voc_annotations(dir.path(), &CategoryPolicy::Fixed(vec!["cat".into()]))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownCategory(ref n) if n == "dog"));
    }
}
