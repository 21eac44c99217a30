//! Mock detector: synthesizes detection sets with planted object-accuracy and
//! relation-correctness rates, for dry runs of the evaluation pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::captions::CaptionRecord;
use crate::error::{Error, Result};
use crate::geometry::{holds, BBox, Relation, RelationConfig};
use crate::metrics::{Detection, DetectionSet};
use crate::sampler::sample_seed;

const CANVAS: f64 = 512.0;
const MAX_TRIES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Probability that both labels are detected above the threshold.
    pub oa_rate: f64,
    /// Probability that the detected boxes satisfy the relation, given both are detected.
    pub relation_rate: f64,
    pub images_per_caption: usize,
    pub score_threshold: f64,
    pub seed: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            oa_rate: 0.8,
            relation_rate: 0.6,
            images_per_caption: 4,
            score_threshold: 0.1,
            seed: 0,
        }
    }
}

impl MockConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("oa_rate", self.oa_rate), ("relation_rate", self.relation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mock score threshold {} must lie strictly inside (0, 1)",
                self.score_threshold
            )));
        }
        if self.images_per_caption < 1 {
            return Err(Error::InvalidConfig("images_per_caption must be >= 1".into()));
        }
        Ok(())
    }
}

fn random_box<R: Rng>(rng: &mut R) -> BBox<f64> {
    let w = rng.gen_range(8.0..CANVAS / 2.0);
    let h = rng.gen_range(8.0..CANVAS / 2.0);
    let x = rng.gen_range(0.0..CANVAS - w);
    let y = rng.gen_range(0.0..CANVAS - h);
    BBox::new(x, y, x + w, y + h).expect("inside canvas")
}

fn nested_in<R: Rng>(outer: &BBox<f64>, rng: &mut R) -> BBox<f64> {
    let [x0, y0, x1, y1] = outer.corners();
    let (w, h) = (x1 - x0, y1 - y0);
    let fx = rng.gen_range(0.0..0.4);
    let fy = rng.gen_range(0.0..0.4);
    BBox::new(x0 + fx * w, y0 + fy * h, x1 - (0.4 - fx) * w, y1 - (0.4 - fy) * h).expect("nested box")
}

/// Draws a box pair for which `relation` holds (`want = true`) or fails.
fn box_pair<R: Rng>(rng: &mut R, relation: Relation, want: bool) -> Result<(BBox<f64>, BBox<f64>)> {
    let cfg = RelationConfig::default();
    for _ in 0..MAX_TRIES {
        let a = random_box(rng);
        // containment is rare for independent boxes, so nest them some of the time
        let (a, b) = match rng.gen_range(0..3) {
            0 => (a, random_box(rng)),
            1 => (a, nested_in(&a, rng)),
            _ => (nested_in(&a, rng), a),
        };
        if holds(relation, &a, &b, &cfg) == want {
            return Ok((a, b));
        }
    }
    Err(Error::SamplingFailed(format!(
        "mock detector could not place boxes with {relation} = {want}"
    )))
}

/// One detection set per (caption, image index), in caption order.
pub fn mock_detections(captions: &[CaptionRecord], cfg: &MockConfig) -> Result<Vec<DetectionSet>> {
    cfg.validate()?;
    let per_caption: Vec<Vec<DetectionSet>> = captions
        .par_iter()
        .enumerate()
        .map(|(ci, cap)| {
            (0..cfg.images_per_caption)
                .map(|ii| {
                    let index = (ci * cfg.images_per_caption + ii) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, index));
                    mock_image(&mut rng, cap, ii, cfg)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_caption.into_iter().flatten().collect())
}

fn mock_image<R: Rng>(rng: &mut R, cap: &CaptionRecord, image_index: usize, cfg: &MockConfig) -> Result<DetectionSet> {
    let both = rng.gen_bool(cfg.oa_rate);
    let correct = rng.gen_bool(cfg.relation_rate);
    let (a, b) = box_pair(rng, cap.relation, correct)?;
    let mut high = || rng.gen_range(cfg.score_threshold..=1.0);
    let mut detections = vec![
        Detection {
            label: cap.subject.clone(),
            score: high(),
            bbox: a,
        },
        Detection {
            label: cap.object.clone(),
            score: high(),
            bbox: b,
        },
    ];
    if !both {
        // drop one or both labels, or keep them below the threshold
        match rng.gen_range(0..3) {
            0 => {
                detections.remove(rng.gen_range(0..2));
            }
            1 => detections.clear(),
            _ => {
                for d in &mut detections {
                    d.score = rng.gen_range(0.0..cfg.score_threshold);
                }
            }
        }
    }
    Ok(DetectionSet {
        caption_id: cap.caption_id.clone(),
        image_index,
        detections,
    })
}
