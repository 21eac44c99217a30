//! The 80 COCO object categories and the fixed held-out-object partition.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// COCO 2017 category names in category-id order.
pub const COCO80: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

/// Training objects of the canonical unseen-object partition (45 labels).
pub const UNSEEN_TRAIN: [&str; 45] = [
    "person", "car", "motorcycle", "airplane", "train", "boat", "fire hydrant", "bench", "bird",
    "elephant", "bear", "giraffe", "handbag", "tie", "snowboard", "baseball bat", "baseball glove",
    "surfboard", "cup", "knife", "spoon", "apple", "sandwich", "orange", "broccoli", "carrot",
    "pizza", "donut", "chair", "couch", "potted plant", "bed", "dining table", "toilet", "laptop",
    "mouse", "remote", "keyboard", "oven", "sink", "book", "clock", "teddy bear", "hair drier",
    "toothbrush",
];

/// Validation objects of the canonical partition (5 labels).
pub const UNSEEN_VAL: [&str; 5] = ["umbrella", "cake", "tv", "refrigerator", "vase"];

/// Test objects of the canonical partition (30 labels).
pub const UNSEEN_TEST: [&str; 30] = [
    "bicycle", "bus", "truck", "traffic light", "stop sign", "parking meter", "cat", "dog",
    "horse", "sheep", "cow", "zebra", "backpack", "suitcase", "frisbee", "skis", "sports ball",
    "kite", "skateboard", "tennis racket", "bottle", "wine glass", "fork", "bowl", "banana",
    "hot dog", "cell phone", "microwave", "toaster", "scissors",
];

pub fn coco80() -> Vec<String> {
    COCO80.iter().map(|s| s.to_string()).collect()
}


/// Ordered set of distinct object labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for label in labels {
            let label = label.into();
            if index.insert(label.clone(), out.len()).is_some() {
                return Err(Error::DuplicateLabel(label));
            }
            out.push(label);
        }
        Ok(Self { labels: out, index })
    }

    pub fn coco80() -> Self {
        Self::new(COCO80).expect("COCO labels are distinct")
    }

    /// Resolves `coco80` to the built-in list, otherwise reads one label per line.
    pub fn from_spec(spec: &str) -> Result<Self> {
        if spec == "coco80" {
            return Ok(Self::coco80());
        }
        let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }
}
