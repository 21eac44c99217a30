//! On-the-fly training captions with relation-consistent augmentation.
//!
//! Each sample picks an image, applies an optional horizontal flip and a
//! random crop to every box, then draws up to `k` captions from distinct
//! ordered instance pairs of the augmented image. Every sample carries its
//! own seed derived from `(global seed, sample index)`, so samples can be
//! generated in parallel and replayed individually.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::captions::{verbalize_with, ArticleStyle};
use crate::error::{Error, Result};
use crate::geometry::{crop, flip_h, holds, valid_relations, BBox, Relation, RelationConfig};
use crate::ingest::{ImageAnnotations, ObjectInstance};
use crate::triplets::SpatialTriplet;

/// Image draws allowed per sample before giving up.
pub const MAX_IMAGE_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Captions concatenated per sample.
    pub k: usize,
    /// Crop redraws before falling back to the uncropped image.
    pub max_iter: usize,
    pub crop_enabled: bool,
    /// Crop window area as a fraction of the image area, `(low, high)`.
    pub crop_scale_range: (f64, f64),
    pub flip_probability: f64,
    pub allowed_objects: Option<BTreeSet<String>>,
    /// A cropped object stays eligible when its visible area exceeds this.
    pub min_visible_area: f64,
    pub seed: u64,
    pub containment_tolerance: f64,
    pub article_style: ArticleStyle,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 10,
            crop_enabled: true,
            crop_scale_range: (0.5, 1.0),
            flip_probability: 0.5,
            allowed_objects: None,
            min_visible_area: 0.0,
            seed: 0,
            containment_tolerance: 0.0,
            article_style: ArticleStyle::Indefinite,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.max_iter < 1 {
            return bad("max_iter must be >= 1".into());
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop scale range ({lo}, {hi}) must satisfy 0 < low <= high <= 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip probability {} outside [0, 1]", self.flip_probability));
        }
        if !self.min_visible_area.is_finite() || self.min_visible_area < 0.0 {
            return bad("min_visible_area must be >= 0".into());
        }
        RelationConfig::new(self.containment_tolerance)?;
        Ok(())
    }

    fn relation_config(&self) -> RelationConfig<f64> {
        RelationConfig {
            containment_tolerance: self.containment_tolerance,
        }
    }

    fn allows(&self, label: &str) -> bool {
        self.allowed_objects.as_ref().is_none_or(|set| set.contains(label))
    }
}

/// What was done to an image; enough to replay the transform exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub flip: bool,
    /// Crop window in the (possibly flipped) image frame; `None` when uncropped.
    pub crop: Option<BBox<f64>>,
}

fn eligible_objects<'a>(img: &'a ImageAnnotations, cfg: &'a SamplerConfig) -> impl Iterator<Item = &'a ObjectInstance> {
    img.objects.iter().filter(|o| cfg.allows(&o.label))
}

/// Applies a recorded augmentation. Objects not allowed by the config, or left
/// with too little visible area, are removed.
pub fn apply_augmentation(
    img: &ImageAnnotations,
    cfg: &SamplerConfig,
    record: &AugmentationRecord,
) -> Result<ImageAnnotations> {
    let mut objects = Vec::new();
    for obj in eligible_objects(img, cfg) {
        let mut bbox = obj.bbox;
        if record.flip {
            bbox = flip_h(&bbox, img.width)?;
        }
        if let Some(window) = &record.crop {
            match crop(&bbox, window) {
                Some(b) if b.area() > cfg.min_visible_area => bbox = b,
                _ => continue,
            }
        }
        objects.push(ObjectInstance {
            bbox,
            ..obj.clone()
        });
    }
    let (width, height) = match &record.crop {
        Some(w) => (w.width(), w.height()),
        None => (img.width, img.height),
    };
    Ok(ImageAnnotations {
        image_id: img.image_id,
        width,
        height,
        objects,
    })
}

fn draw_crop_window<R: Rng>(width: f64, height: f64, cfg: &SamplerConfig, rng: &mut R) -> Result<BBox<f64>> {
    let (lo, hi) = cfg.crop_scale_range;
    let scale = rng.gen_range(lo..=hi).sqrt();
    let (w, h) = (width * scale, height * scale);
    let x0 = rng.gen_range(0.0..=(width - w).max(0.0));
    let y0 = rng.gen_range(0.0..=(height - h).max(0.0));
    BBox::new(x0, y0, (x0 + w).min(width), (y0 + h).min(height))
}

/// Random flip then random crop, redrawing the crop up to `max_iter` times
/// while fewer than two eligible objects survive.
pub fn augment<R: Rng>(
    img: &ImageAnnotations,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(ImageAnnotations, AugmentationRecord)> {
    let eligible = eligible_objects(img, cfg).count();
    if eligible < 2 {
        return Err(Error::NotEnoughObjects(format!(
            "image {} has {eligible} eligible object(s)",
            img.image_id
        )));
    }
    let flip = rng.gen_bool(cfg.flip_probability);
    if cfg.crop_enabled {
        for _ in 0..cfg.max_iter {
            let window = draw_crop_window(img.width, img.height, cfg, rng)?;
            let record = AugmentationRecord {
                flip,
                crop: Some(window),
            };
            let out = apply_augmentation(img, cfg, &record)?;
            if out.objects.len() >= 2 {
                return Ok((out, record));
            }
        }
    }
    let record = AugmentationRecord { flip, crop: None };
    Ok((apply_augmentation(img, cfg, &record)?, record))
}

/// One caption drawn from an augmented image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTriplet {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub subject_instance: u64,
    pub object_instance: u64,
    pub subject_bbox: BBox<f64>,
    pub object_bbox: BBox<f64>,
}

impl SampledTriplet {
    pub fn triplet(&self) -> SpatialTriplet {
        SpatialTriplet::new(self.subject.clone(), self.relation, self.object.clone())
    }
}

/// Draws an ordered pair of distinct-label instances uniformly among pairs not
/// in `used`, then one of its valid relations uniformly. Pairs without any
/// valid relation are discarded and the draw repeated.
pub fn sample_caption_excluding<R: Rng>(
    img: &ImageAnnotations,
    cfg: &SamplerConfig,
    rng: &mut R,
    used: &HashSet<(u64, u64)>,
) -> Result<(SampledTriplet, String)> {
    let rel_cfg = cfg.relation_config();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, a) in img.objects.iter().enumerate() {
        for (j, b) in img.objects.iter().enumerate() {
            if i != j && a.label != b.label && !used.contains(&(a.instance_id, b.instance_id)) {
                pairs.push((i, j));
            }
        }
    }
    while !pairs.is_empty() {
        let pick = rng.gen_range(0..pairs.len());
        let (i, j) = pairs[pick];
        let (s, o) = (&img.objects[i], &img.objects[j]);
        let relations = valid_relations(&s.bbox, &o.bbox, &rel_cfg).to_vec();
        if relations.is_empty() {
            pairs.swap_remove(pick);
            continue;
        }
        let relation = relations[rng.gen_range(0..relations.len())];
        let sampled = SampledTriplet {
            subject: s.label.clone(),
            relation,
            object: o.label.clone(),
            subject_instance: s.instance_id,
            object_instance: o.instance_id,
            subject_bbox: s.bbox,
            object_bbox: o.bbox,
        };
        let text = verbalize_with(&sampled.triplet(), cfg.article_style);
        return Ok((sampled, text));
    }
    Err(Error::NotEnoughObjects(format!(
        "image {} has no usable pair of distinct-label objects",
        img.image_id
    )))
}

pub fn sample_caption<R: Rng>(
    img: &ImageAnnotations,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(SampledTriplet, String)> {
    sample_caption_excluding(img, cfg, rng, &HashSet::new())
}

/// One line of the training manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub sample_index: u64,
    pub image_id: u64,
    pub text: String,
    pub triplets: Vec<SampledTriplet>,
    pub flip: bool,
    pub crop: Option<BBox<f64>>,
    pub seed: u64,
}

impl TrainingSample {
    pub fn augmentation(&self) -> AugmentationRecord {
        AugmentationRecord {
            flip: self.flip,
            crop: self.crop,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under global seed `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn has_distinct_pair(img: &ImageAnnotations, cfg: &SamplerConfig) -> bool {
    let mut labels = eligible_objects(img, cfg).map(|o| o.label.as_str());
    match labels.next() {
        Some(first) => labels.any(|l| l != first),
        None => false,
    }
}

/// Generates sample `index` of the stream defined by `cfg.seed`.
pub fn sample_one(corpus: &[ImageAnnotations], usable: &[usize], cfg: &SamplerConfig, index: u64) -> Result<TrainingSample> {
    let seed = sample_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_IMAGE_ATTEMPTS {
        let img = &corpus[usable[rng.gen_range(0..usable.len())]];
        let (augmented, record) = match augment(img, cfg, &mut rng) {
            Ok(v) => v,
            Err(Error::NotEnoughObjects(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut used = HashSet::new();
        let mut triplets = Vec::with_capacity(cfg.k);
        let mut texts = Vec::with_capacity(cfg.k);
        for _ in 0..cfg.k {
            match sample_caption_excluding(&augmented, cfg, &mut rng, &used) {
                Ok((t, text)) => {
                    used.insert((t.subject_instance, t.object_instance));
                    triplets.push(t);
                    texts.push(text);
                }
                Err(Error::NotEnoughObjects(_)) => break,
                Err(e) => return Err(e),
            }
        }
        if triplets.is_empty() {
            continue;
        }
        return Ok(TrainingSample {
            sample_index: index,
            image_id: img.image_id,
            text: texts.join(" "),
            triplets,
            flip: record.flip,
            crop: record.crop,
            seed,
        });
    }
    Err(Error::SamplingFailed(format!(
        "sample {index}: no usable image after {MAX_IMAGE_ATTEMPTS} draws"
    )))
}

/// `n` samples in index order; generated in parallel, deterministic for a fixed seed.
pub fn sample_training_batch(corpus: &[ImageAnnotations], cfg: &SamplerConfig, n: u64) -> Result<Vec<TrainingSample>> {
    sample_training_range(corpus, cfg, 0, n)
}

pub fn sample_training_range(
    corpus: &[ImageAnnotations],
    cfg: &SamplerConfig,
    start: u64,
    n: u64,
) -> Result<Vec<TrainingSample>> {
    cfg.validate()?;
    let usable: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, img)| has_distinct_pair(img, cfg))
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::NotEnoughObjects(
            "no image has two eligible objects with distinct labels".into(),
        ));
    }
    (start..start + n)
        .into_par_iter()
        .map(|i| sample_one(corpus, &usable, cfg, i))
        .collect()
}

/// Re-derives a sample's augmented boxes from the source image and checks
/// every emitted relation on them.
pub fn verify_sample(sample: &TrainingSample, source: &ImageAnnotations, cfg: &SamplerConfig) -> Result<()> {
    let fail = |m: String| Err(Error::Schema(format!("sample {}: {m}", sample.sample_index)));
    if source.image_id != sample.image_id {
        return fail(format!("source image {} != {}", source.image_id, sample.image_id));
    }
    let replayed = apply_augmentation(source, cfg, &sample.augmentation())?;
    let rel_cfg = cfg.relation_config();
    let mut pairs = HashSet::new();
    let mut texts = Vec::new();
    for t in &sample.triplets {
        if !pairs.insert((t.subject_instance, t.object_instance)) {
            return fail("instance pair reused".into());
        }
        if !holds(t.relation, &t.subject_bbox, &t.object_bbox, &rel_cfg) {
            return fail(format!("{} does not hold on recorded boxes", t.triplet()));
        }
        let find = |id: u64| replayed.objects.iter().find(|o| o.instance_id == id);
        match (find(t.subject_instance), find(t.object_instance)) {
            (Some(s), Some(o)) if s.bbox == t.subject_bbox && o.bbox == t.object_bbox => {
                if s.label != t.subject || o.label != t.object {
                    return fail("labels differ from source".into());
                }
            }
            _ => return fail(format!("{} boxes differ from replay", t.triplet())),
        }
        if let Some(allowed) = &cfg.allowed_objects {
            if !allowed.contains(&t.subject) || !allowed.contains(&t.object) {
                return fail(format!("{} uses a disallowed label", t.triplet()));
            }
        }
        texts.push(verbalize_with(&t.triplet(), cfg.article_style));
    }
    if texts.join(" ") != sample.text {
        return fail("text is not the concatenation of the triplet captions".into());
    }
    Ok(())
}
