//! Object accuracy, VISOR and conditional VISOR over detector outputs.
//!
//! Every generated image contributes one `(oa, visor)` pair of 0/1 outcomes.
//! Reports keep the raw counts so that any percentage can be recomputed
//! exactly, including with rational arithmetic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::captions::CaptionRecord;
use crate::error::{Error, Result};
use crate::geometry::{holds, BBox, Relation, RelationConfig};
use crate::io::{self, Provenance};
use crate::scalar::Scalar;
use crate::triplets::SpatialTriplet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub bbox: BBox<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub caption_id: String,
    pub image_index: usize,
    pub detections: Vec<Detection>,
}

/// How a label with several detections is reduced to boxes for the relation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Highest-scoring detection of each label.
    #[default]
    BestScore,
    /// Any subject/object detection pair may satisfy the relation.
    AnyPair,
}

impl std::str::FromStr for PairingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best_score" => Ok(PairingMode::BestScore),
            "any_pair" => Ok(PairingMode::AnyPair),
            other => Err(Error::InvalidConfig(format!(
                "unknown pairing mode '{other}' (expected best_score or any_pair)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub images_per_caption: usize,
    pub pairing_mode: PairingMode,
    #[serde(default)]
    pub containment_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            images_per_caption: 4,
            pairing_mode: PairingMode::BestScore,
            containment_tolerance: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        if self.images_per_caption < 1 {
            return Err(Error::InvalidConfig("images_per_caption must be >= 1".into()));
        }
        RelationConfig::new(self.containment_tolerance)?;
        Ok(())
    }

    fn relation_config(&self) -> RelationConfig<f64> {
        RelationConfig {
            containment_tolerance: self.containment_tolerance,
        }
    }
}

fn present<'a>(d: &'a DetectionSet, label: &'a str, threshold: f64) -> impl Iterator<Item = &'a Detection> {
    d.detections
        .iter()
        .filter(move |x| x.label == label && x.score >= threshold)
}

fn best<'a>(d: &'a DetectionSet, label: &str, threshold: f64) -> Option<&'a Detection> {
    let mut found: Option<&'a Detection> = None;
    for x in d.detections.iter().filter(|x| x.label == label && x.score >= threshold) {
        found = match found {
            Some(a) if a.score >= x.score => Some(a),
            _ => Some(x),
        };
    }
    found
}

/// Both labels detected at or above the threshold.
pub fn object_accuracy(d: &DetectionSet, t: &SpatialTriplet, cfg: &EvalConfig) -> bool {
    present(d, &t.subject, cfg.score_threshold).next().is_some()
        && present(d, &t.object, cfg.score_threshold).next().is_some()
}

/// Both labels detected and the relation holds between their boxes.
pub fn visor(d: &DetectionSet, t: &SpatialTriplet, cfg: &EvalConfig) -> bool {
    if !object_accuracy(d, t, cfg) {
        return false;
    }
    let rel_cfg = cfg.relation_config();
    let th = cfg.score_threshold;
    match cfg.pairing_mode {
        PairingMode::BestScore => match (best(d, &t.subject, th), best(d, &t.object, th)) {
            (Some(s), Some(o)) => holds(t.relation, &s.bbox, &o.bbox, &rel_cfg),
            _ => false,
        },
        PairingMode::AnyPair => present(d, &t.subject, th)
            .any(|s| present(d, &t.object, th).any(|o| holds(t.relation, &s.bbox, &o.bbox, &rel_cfg))),
    }
}

/// Image-level tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: u64,
    pub oa: u64,
    pub visor: u64,
}

fn percent<T: Scalar>(num: u64, den: u64) -> Option<T> {
    if den == 0 {
        return None;
    }
    let hundred = T::from_f64_value(100.0)?;
    Some(hundred * T::from_f64_value(num as f64)? / T::from_f64_value(den as f64)?)
}

impl Counts {
    pub fn add_image(&mut self, oa: bool, visor: bool) {
        self.images += 1;
        self.oa += u64::from(oa);
        self.visor += u64::from(visor);
    }

    pub fn merge(&mut self, other: &Counts) {
        self.images += other.images;
        self.oa += other.oa;
        self.visor += other.visor;
    }

    pub fn oa_percent<T: Scalar>(&self) -> Option<T> {
        percent(self.oa, self.images)
    }

    pub fn visor_percent<T: Scalar>(&self) -> Option<T> {
        percent(self.visor, self.images)
    }

    /// Undefined (None) when no image had both objects.
    pub fn visor_cond_percent<T: Scalar>(&self) -> Option<T> {
        percent(self.visor, self.oa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub counts: Counts,
    pub oa: Option<f64>,
    pub visor: Option<f64>,
    pub visor_cond: Option<f64>,
}

impl From<Counts> for MetricSummary {
    fn from(counts: Counts) -> Self {
        Self {
            counts,
            oa: counts.oa_percent(),
            visor: counts.visor_percent(),
            visor_cond: counts.visor_cond_percent(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub relation: Relation,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRow {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

impl TripletRow {
    pub fn triplet(&self) -> SpatialTriplet {
        SpatialTriplet::new(self.subject.clone(), self.relation, self.object.clone())
    }
}

/// Conditional-VISOR gap between the two members of an opposite pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub first: Relation,
    pub second: Relation,
    pub first_visor_cond: Option<f64>,
    pub second_visor_cond: Option<f64>,
    /// `first - second`; absent when either side is undefined.
    pub delta: Option<f64>,
    /// Shown in the published opposite-pair figure (all pairs but overlapping/separated).
    pub in_figure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub config: EvalConfig,
    pub caption_count: usize,
    /// SHA-256 over the sorted caption ids.
    pub caption_set_digest: String,
    pub overall: MetricSummary,
    pub per_relation: Vec<RelationRow>,
    pub opposite_pairs: Vec<PairDelta>,
    pub per_triplet: Vec<TripletRow>,
}

impl EvalReport {
    pub fn relation_counts(&self, r: Relation) -> Counts {
        self.per_relation
            .iter()
            .find(|row| row.relation == r)
            .map(|row| row.metrics.counts)
            .unwrap_or_default()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

pub fn caption_set_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    io::sha256_hex(ids.join("\n").as_bytes())
}

pub fn pair_deltas(per_relation: &BTreeMap<Relation, Counts>) -> Vec<PairDelta> {
    Relation::OPPOSITE_PAIRS
        .iter()
        .map(|&(first, second)| {
            let cond = |r| per_relation.get(&r).and_then(|c| c.visor_cond_percent::<f64>());
            let (a, b) = (cond(first), cond(second));
            PairDelta {
                first,
                second,
                first_visor_cond: a,
                second_visor_cond: b,
                delta: a.zip(b).map(|(a, b)| a - b),
                in_figure: first != Relation::Overlapping,
            }
        })
        .collect()
}

fn list_ids(ids: &[String]) -> String {
    const SHOWN: usize = 20;
    let mut out = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        out.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    out
}

/// Checks that every caption has exactly `images_per_caption` detection sets
/// with indices `0..images_per_caption`, and returns them grouped per caption.
fn group_sets<'a>(
    sets: &'a [DetectionSet],
    captions: &[CaptionRecord],
    cfg: &EvalConfig,
) -> Result<Vec<Vec<&'a DetectionSet>>> {
    let index: HashMap<&str, usize> = captions
        .iter()
        .enumerate()
        .map(|(i, c)| (c.caption_id.as_str(), i))
        .collect();
    if index.len() != captions.len() {
        return Err(Error::Schema("duplicate caption ids in caption manifest".into()));
    }
    let mut grouped: Vec<Vec<Option<&DetectionSet>>> = vec![vec![None; cfg.images_per_caption]; captions.len()];
    let mut unknown = Vec::new();
    let mut bad = Vec::new();
    for set in sets {
        let Some(&ci) = index.get(set.caption_id.as_str()) else {
            unknown.push(set.caption_id.clone());
            continue;
        };
        match grouped[ci].get_mut(set.image_index) {
            Some(slot @ None) => *slot = Some(set),
            _ => bad.push(set.caption_id.clone()),
        }
    }
    let mut missing: Vec<String> = captions
        .iter()
        .zip(&grouped)
        .filter(|(_, g)| g.iter().any(Option::is_none))
        .map(|(c, _)| c.caption_id.clone())
        .collect();
    if !(unknown.is_empty() && bad.is_empty() && missing.is_empty()) {
        let mut parts = Vec::new();
        for (what, ids) in [
            ("missing detection sets for", &mut missing),
            ("duplicate or out-of-range image index for", &mut bad),
            ("detection sets for unknown captions", &mut unknown),
        ] {
            if !ids.is_empty() {
                ids.sort();
                ids.dedup();
                parts.push(format!("{what}: {}", list_ids(ids)));
            }
        }
        return Err(Error::DetectionMismatch(parts.join("; ")));
    }
    Ok(grouped
        .into_iter()
        .map(|g| g.into_iter().map(|s| s.expect("checked above")).collect())
        .collect())
}

/// Per-image `(oa, visor)` outcomes for each caption, in caption order.
pub fn score_run(
    sets: &[DetectionSet],
    captions: &[CaptionRecord],
    cfg: &EvalConfig,
) -> Result<Vec<Vec<(bool, bool)>>> {
    cfg.validate()?;
    let grouped = group_sets(sets, captions, cfg)?;
    Ok(captions
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(cap, imgs)| {
            let t = cap.triplet();
            imgs.iter()
                .map(|d| (object_accuracy(d, &t, cfg), visor(d, &t, cfg)))
                .collect()
        })
        .collect())
}

pub fn aggregate(sets: &[DetectionSet], captions: &[CaptionRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    let outcomes = score_run(sets, captions, cfg)?;
    let mut overall = Counts::default();
    let mut per_relation: BTreeMap<Relation, Counts> = BTreeMap::new();
    let mut per_triplet: BTreeMap<SpatialTriplet, Counts> = BTreeMap::new();
    for (cap, imgs) in captions.iter().zip(&outcomes) {
        let rel = per_relation.entry(cap.relation).or_default();
        let trip = per_triplet.entry(cap.triplet()).or_default();
        for &(oa, v) in imgs {
            overall.add_image(oa, v);
            rel.add_image(oa, v);
            trip.add_image(oa, v);
        }
    }
    Ok(EvalReport {
        provenance: None,
        config: *cfg,
        caption_count: captions.len(),
        caption_set_digest: caption_set_digest(captions.iter().map(|c| c.caption_id.as_str())),
        overall: overall.into(),
        per_relation: Relation::ALL
            .iter()
            .filter_map(|r| {
                per_relation.get(r).map(|c| RelationRow {
                    relation: *r,
                    metrics: (*c).into(),
                })
            })
            .collect(),
        opposite_pairs: pair_deltas(&per_relation),
        per_triplet: per_triplet
            .into_iter()
            .map(|(t, c)| TripletRow {
                subject: t.subject,
                relation: t.relation,
                object: t.object,
                metrics: c.into(),
            })
            .collect(),
    })
}

/// Wire form of one detections line. Boxes may be normalized to `[0, 1]`
/// when the record carries the image size.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionLine {
    caption_id: String,
    image_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_height: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    normalized: bool,
    detections: Vec<RawDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDetection {
    label: String,
    score: f64,
    bbox: [f64; 4],
}

fn convert_line(line: DetectionLine) -> Result<DetectionSet> {
    let scale = if line.normalized {
        match (line.image_width, line.image_height) {
            (Some(w), Some(h)) if w > 0.0 && h > 0.0 => (w, h),
            _ => {
                return Err(Error::Schema(format!(
                    "caption {} image {}: normalized boxes need image_width and image_height",
                    line.caption_id, line.image_index
                )))
            }
        }
    } else {
        (1.0, 1.0)
    };
    let detections = line
        .detections
        .into_iter()
        .map(|d| {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Schema(format!(
                    "caption {}: score {} outside [0, 1]",
                    line.caption_id, d.score
                )));
            }
            let [x0, y0, x1, y1] = d.bbox;
            let bbox = BBox::new(x0 * scale.0, y0 * scale.1, x1 * scale.0, y1 * scale.1).map_err(|e| {
                Error::Schema(format!("caption {} image {}: {e}", line.caption_id, line.image_index))
            })?;
            Ok(Detection {
                label: d.label,
                score: d.score,
                bbox,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DetectionSet {
        caption_id: line.caption_id,
        image_index: line.image_index,
        detections,
    })
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionSet>> {
    let (_, lines): (_, Vec<DetectionLine>) = io::read_jsonl(path)?;
    let sets: Vec<DetectionSet> = lines.into_iter().map(convert_line).collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    for s in &sets {
        if !seen.insert((s.caption_id.as_str(), s.image_index)) {
            return Err(Error::DetectionMismatch(format!(
                "duplicate detection set ({}, {})",
                s.caption_id, s.image_index
            )));
        }
    }
    Ok(sets)
}

pub fn write_detections(path: &Path, provenance: &Provenance, sets: &[DetectionSet]) -> Result<()> {
    io::write_jsonl(path, provenance, sets)
}
