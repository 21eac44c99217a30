//! Triplet universe, per-image triplet extraction and corpus frequency tables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{valid_relations, Relation, RelationConfig};
use crate::ingest::ImageAnnotations;
use crate::io::{self, Provenance};
use crate::labels::Vocabulary;

/// Ordered `<subject, relation, object>` over object labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialTriplet {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl SpatialTriplet {
    pub fn new(subject: impl Into<String>, relation: Relation, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation,
            object: object.into(),
        }
    }

    /// The same fact stated from the object's side.
    pub fn converse(&self) -> Self {
        Self::new(self.object.clone(), self.relation.converse(), self.subject.clone())
    }

    pub fn mentions(&self, label: &str) -> bool {
        self.subject == label || self.object == label
    }
}

// Lexicographic on the rendered fields so snapshots sort the same way as text.
impl Ord for SpatialTriplet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.subject
            .cmp(&other.subject)
            .then_with(|| self.relation.as_str().cmp(other.relation.as_str()))
            .then_with(|| self.object.cmp(&other.object))
    }
}

impl PartialOrd for SpatialTriplet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SpatialTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}, {}>", self.subject, self.relation, self.object)
    }
}

/// What one increment of a triplet count stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingUnit {
    /// One per ordered instance pair per image.
    #[default]
    InstancePair,
    /// At most one per image.
    ImagePresence,
}

/// Triplet occurrence counts; present keys always have count >= 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletTable {
    counts: BTreeMap<SpatialTriplet, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TripletRow {
    subject: String,
    relation: Relation,
    object: String,
    count: u64,
}

impl TripletTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, triplet: SpatialTriplet, count: u64) {
        if count > 0 {
            *self.counts.entry(triplet).or_insert(0) += count;
        }
    }

    pub fn count(&self, triplet: &SpatialTriplet) -> u64 {
        self.counts.get(triplet).copied().unwrap_or(0)
    }

    pub fn contains(&self, triplet: &SpatialTriplet) -> bool {
        self.counts.contains_key(triplet)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SpatialTriplet, u64)> {
        self.counts.iter().map(|(t, c)| (t, *c))
    }

    pub fn triplets(&self) -> impl Iterator<Item = &SpatialTriplet> {
        self.counts.keys()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn merge(&mut self, other: &TripletTable) {
        for (t, c) in other.iter() {
            self.add(t.clone(), c);
        }
    }

    /// Keeps only triplets for which `keep` returns true.
    pub fn filtered(&self, mut keep: impl FnMut(&SpatialTriplet) -> bool) -> TripletTable {
        TripletTable {
            counts: self
                .counts
                .iter()
                .filter(|(t, _)| keep(t))
                .map(|(t, c)| (t.clone(), *c))
                .collect(),
        }
    }

    pub fn write_snapshot(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        let rows: Vec<TripletRow> = self
            .iter()
            .map(|(t, count)| TripletRow {
                subject: t.subject.clone(),
                relation: t.relation,
                object: t.object.clone(),
                count,
            })
            .collect();
        io::write_jsonl(path, provenance, &rows)
    }

    pub fn read_snapshot(path: &Path) -> Result<TripletTable> {
        let (_, rows): (_, Vec<TripletRow>) = io::read_jsonl(path)?;
        let mut table = TripletTable::new();
        for row in rows {
            if row.count == 0 {
                return Err(Error::Schema(format!(
                    "{}: zero count for <{}, {}, {}>",
                    path.display(),
                    row.subject,
                    row.relation,
                    row.object
                )));
            }
            let t = SpatialTriplet::new(row.subject, row.relation, row.object);
            if table.contains(&t) {
                return Err(Error::Schema(format!("{}: duplicate triplet {t}", path.display())));
            }
            table.add(t, row.count);
        }
        Ok(table)
    }
}

impl FromIterator<(SpatialTriplet, u64)> for TripletTable {
    fn from_iter<I: IntoIterator<Item = (SpatialTriplet, u64)>>(iter: I) -> Self {
        let mut table = TripletTable::new();
        for (t, c) in iter {
            table.add(t, c);
        }
        table
    }
}

/// Every ordered pair of distinct labels combined with every relation.
pub fn build_universe(vocabulary: &Vocabulary) -> BTreeSet<SpatialTriplet> {
    let labels = vocabulary.labels();
    let mut out = BTreeSet::new();
    for s in labels {
        for o in labels {
            if s == o {
                continue;
            }
            for r in Relation::ALL {
                out.insert(SpatialTriplet::new(s.clone(), r, o.clone()));
            }
        }
    }
    out
}

pub fn universe_size(vocabulary_size: usize) -> usize {
    vocabulary_size * vocabulary_size.saturating_sub(1) * Relation::ALL.len()
}

/// Dense `label x label x relation` counter used while scanning a corpus.
#[derive(Clone)]
struct DenseCounts {
    n_labels: usize,
    counts: Vec<u64>,
}

impl DenseCounts {
    fn new(n_labels: usize) -> Self {
        Self {
            n_labels,
            counts: vec![0; n_labels * n_labels * Relation::ALL.len()],
        }
    }

    fn slot(&self, s: usize, r: Relation, o: usize) -> usize {
        (s * self.n_labels + o) * Relation::ALL.len() + r.index()
    }

    fn merge(mut self, other: DenseCounts) -> DenseCounts {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    fn into_table(self, vocabulary: &Vocabulary) -> TripletTable {
        let mut table = TripletTable::new();
        for s in 0..self.n_labels {
            for o in 0..self.n_labels {
                for r in Relation::ALL {
                    let c = self.counts[self.slot(s, r, o)];
                    if c > 0 {
                        table.add(
                            SpatialTriplet::new(vocabulary.label(s), r, vocabulary.label(o)),
                            c,
                        );
                    }
                }
            }
        }
        table
    }
}

fn accumulate_image(
    img: &ImageAnnotations,
    vocabulary: &Vocabulary,
    cfg: &RelationConfig<f64>,
    unit: CountingUnit,
    acc: &mut DenseCounts,
) -> Result<()> {
    let ids: Vec<usize> = img
        .objects
        .iter()
        .map(|o| {
            vocabulary.index_of(&o.label).ok_or_else(|| {
                Error::Schema(format!(
                    "image {}: label '{}' not in vocabulary",
                    img.image_id, o.label
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    for (i, subj) in img.objects.iter().enumerate() {
        for (j, obj) in img.objects.iter().enumerate() {
            if i == j || ids[i] == ids[j] {
                continue;
            }
            for r in valid_relations(&subj.bbox, &obj.bbox, cfg).iter() {
                let slot = acc.slot(ids[i], r, ids[j]);
                if unit == CountingUnit::ImagePresence && !seen.insert(slot) {
                    continue;
                }
                acc.counts[slot] += 1;
            }
        }
    }
    Ok(())
}

/// Triplets instantiated by one image.
pub fn extract_image_triplets(
    img: &ImageAnnotations,
    vocabulary: &Vocabulary,
    cfg: &RelationConfig<f64>,
    unit: CountingUnit,
) -> Result<TripletTable> {
    let mut acc = DenseCounts::new(vocabulary.len());
    accumulate_image(img, vocabulary, cfg, unit, &mut acc)?;
    Ok(acc.into_table(vocabulary))
}

/// Sums per-image triplet counts over `corpus` and keeps those in `universe`.
pub fn natural_filter(
    universe: &BTreeSet<SpatialTriplet>,
    corpus: &[ImageAnnotations],
    vocabulary: &Vocabulary,
    cfg: &RelationConfig<f64>,
    unit: CountingUnit,
) -> Result<TripletTable> {
    let n = vocabulary.len();
    let dense = corpus
        .par_iter()
        .try_fold(
            || DenseCounts::new(n),
            |mut acc, img| {
                accumulate_image(img, vocabulary, cfg, unit, &mut acc)?;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(|| DenseCounts::new(n), |a, b| Ok(a.merge(b)))?;
    Ok(dense.into_table(vocabulary).filtered(|t| universe.contains(t)))
}
