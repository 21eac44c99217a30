//! COCO instances parsing into validated per-image object lists.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::{self, Provenance};
use crate::labels::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: u64,
    pub label: String,
    pub bbox: BBox<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotations {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectInstance>,
}

impl ImageAnnotations {
    /// Checks sizes, box bounds, vocabulary membership and instance-id uniqueness.
    pub fn validate(&self, vocabulary: Option<&Vocabulary>) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Schema(format!(
                "image {} has non-positive size {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for obj in &self.objects {
            if !seen.insert(obj.instance_id) {
                return Err(Error::Schema(format!(
                    "image {}: duplicate instance id {}",
                    self.image_id, obj.instance_id
                )));
            }
            if let Some(v) = vocabulary {
                if !v.contains(&obj.label) {
                    return Err(Error::Schema(format!(
                        "image {}: label '{}' not in vocabulary",
                        self.image_id, obj.label
                    )));
                }
            }
            if !obj.bbox.within(self.width, self.height) {
                return Err(Error::Schema(format!(
                    "image {}: instance {} box {} exceeds {}x{}",
                    self.image_id, obj.instance_id, obj.bbox, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// How questionable annotations are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestPolicy {
    pub include_crowd: bool,
    /// Clamp out-of-bounds boxes to the image; when `false` they are dropped.
    pub clamp_out_of_bounds: bool,
}

impl Default for IngestPolicy {
    fn default() -> Self {
        Self {
            include_crowd: false,
            clamp_out_of_bounds: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub input_annotations: u64,
    pub retained: u64,
    pub dropped_crowd: u64,
    pub dropped_zero_area: u64,
    pub dropped_out_of_bounds: u64,
    /// Retained instances whose box was clamped to the image rectangle.
    pub clamped: u64,
}

impl IngestStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_crowd + self.dropped_zero_area + self.dropped_out_of_bounds
    }
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default, deserialize_with = "deserialize_flag")]
    iscrowd: bool,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn deserialize_flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(i64),
    }
    Ok(match Flag::deserialize(d)? {
        Flag::Bool(b) => b,
        Flag::Int(i) => i != 0,
    })
}

/// Parses a COCO instances file.
pub fn load_annotations(
    path: &Path,
    vocabulary: &Vocabulary,
    policy: IngestPolicy,
) -> Result<(Vec<ImageAnnotations>, IngestStats)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let coco: CocoFile = serde_json::from_slice(&bytes).map_err(|e| io::parse_error(path, &e))?;
    convert(coco, vocabulary, policy)
}

/// Parses COCO instances JSON held in memory.
pub fn parse_annotations(
    json: &str,
    vocabulary: &Vocabulary,
    policy: IngestPolicy,
) -> Result<(Vec<ImageAnnotations>, IngestStats)> {
    let coco: CocoFile =
        serde_json::from_str(json).map_err(|e| io::parse_error(Path::new("<memory>"), &e))?;
    convert(coco, vocabulary, policy)
}

fn convert(
    coco: CocoFile,
    vocabulary: &Vocabulary,
    policy: IngestPolicy,
) -> Result<(Vec<ImageAnnotations>, IngestStats)> {
    let mut categories: HashMap<u64, String> = HashMap::new();
    for cat in coco.categories {
        if !vocabulary.contains(&cat.name) {
            return Err(Error::Schema(format!(
                "category {} '{}' not in vocabulary",
                cat.id, cat.name
            )));
        }
        if categories.insert(cat.id, cat.name).is_some() {
            return Err(Error::Schema(format!("duplicate category id {}", cat.id)));
        }
    }

    let mut images: BTreeMap<u64, ImageAnnotations> = BTreeMap::new();
    for img in coco.images {
        if !(img.width > 0.0 && img.height > 0.0) {
            return Err(Error::Schema(format!(
                "image {} has non-positive size {}x{}",
                img.id, img.width, img.height
            )));
        }
        let record = ImageAnnotations {
            image_id: img.id,
            width: img.width,
            height: img.height,
            objects: Vec::new(),
        };
        if images.insert(img.id, record).is_some() {
            return Err(Error::Schema(format!("duplicate image id {}", img.id)));
        }
    }

    let mut stats = IngestStats::default();
    for ann in coco.annotations {
        stats.input_annotations += 1;
        let label = categories.get(&ann.category_id).ok_or_else(|| {
            Error::Schema(format!(
                "annotation {} references unknown category id {}",
                ann.id, ann.category_id
            ))
        })?;
        let image = images.get_mut(&ann.image_id).ok_or_else(|| {
            Error::Schema(format!(
                "annotation {} references unknown image id {}",
                ann.id, ann.image_id
            ))
        })?;
        if ann.iscrowd && !policy.include_crowd {
            stats.dropped_crowd += 1;
            continue;
        }
        let [x, y, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0) {
            stats.dropped_zero_area += 1;
            continue;
        }
        let (bbox, clamped) = match place_box(x, y, w, h, image.width, image.height) {
            Some(placed) => placed,
            None => {
                stats.dropped_out_of_bounds += 1;
                continue;
            }
        };
        if clamped {
            if !policy.clamp_out_of_bounds {
                stats.dropped_out_of_bounds += 1;
                continue;
            }
            stats.clamped += 1;
        }
        stats.retained += 1;
        image.objects.push(ObjectInstance {
            instance_id: ann.id,
            label: label.clone(),
            bbox,
        });
    }

    let mut out: Vec<ImageAnnotations> = images.into_values().collect();
    for img in &mut out {
        img.objects.sort_by_key(|o| o.instance_id);
        if let Some(dup) = img
            .objects
            .windows(2)
            .find(|w| w[0].instance_id == w[1].instance_id)
        {
            return Err(Error::Schema(format!(
                "duplicate annotation id {}",
                dup[0].instance_id
            )));
        }
    }
    Ok((out, stats))
}

/// Corner box for an xywh record; the flag reports whether clamping was needed.
/// `None` when nothing with positive area remains inside the image.
fn place_box(x: f64, y: f64, w: f64, h: f64, width: f64, height: f64) -> Option<(BBox<f64>, bool)> {
    let (x0, y0, x1, y1) = (x, y, x + w, y + h);
    if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
        return None;
    }
    let inside = x0 >= 0.0 && y0 >= 0.0 && x1 <= width && y1 <= height;
    if inside {
        return BBox::new(x0, y0, x1, y1).ok().map(|b| (b, false));
    }
    let cx0 = x0.clamp(0.0, width);
    let cy0 = y0.clamp(0.0, height);
    let cx1 = x1.clamp(0.0, width);
    let cy1 = y1.clamp(0.0, height);
    let b = BBox::new(cx0, cy0, cx1, cy1).ok()?;
    (b.area() > 0.0).then_some((b, true))
}

/// Writes the normalized one-image-per-line snapshot.
pub fn write_snapshot(path: &Path, provenance: &Provenance, images: &[ImageAnnotations]) -> Result<()> {
    io::write_jsonl(path, provenance, images)
}

pub fn read_snapshot(path: &Path, vocabulary: &Vocabulary) -> Result<Vec<ImageAnnotations>> {
    let (_, images): (_, Vec<ImageAnnotations>) = io::read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for img in &images {
        if !seen.insert(img.image_id) {
            return Err(Error::Schema(format!("duplicate image id {}", img.image_id)));
        }
        img.validate(Some(vocabulary))?;
    }
    Ok(images)
}

/// Loads either a COCO instances file (`.json`) or a normalized snapshot (`.jsonl`).
pub fn load_any(
    path: &Path,
    vocabulary: &Vocabulary,
    policy: IngestPolicy,
) -> Result<(Vec<ImageAnnotations>, Option<IngestStats>)> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok((read_snapshot(path, vocabulary)?, None))
    } else {
        let (images, stats) = load_annotations(path, vocabulary, policy)?;
        Ok((images, Some(stats)))
    }
}
