//! Main and unseen-object evaluation splits.
//!
//! The main split tests on every naturally-occurring triplet. The unseen split
//! partitions the vocabulary into train/val/test objects: test triplets use
//! only test objects, validation triplets mention at least one validation
//! object and no test object.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Relation;
use crate::io::{self, Provenance};
use crate::labels::{Vocabulary, UNSEEN_TEST, UNSEEN_TRAIN, UNSEEN_VAL};
use crate::triplets::{SpatialTriplet, TripletTable};

pub const DEFAULT_VAL_SIZE: usize = 2_500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPartition {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl ObjectPartition {
    /// The fixed 45/5/30 partition shipped with the dataset.
    pub fn canonical() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            train: own(&UNSEEN_TRAIN),
            val: own(&UNSEEN_VAL),
            test: own(&UNSEEN_TEST),
        }
    }

    /// Seeded random partition with the given sizes.
    pub fn random(vocabulary: &Vocabulary, sizes: (usize, usize, usize), seed: u64) -> Result<Self> {
        let (n_train, n_val, n_test) = sizes;
        if n_train + n_val + n_test != vocabulary.len() {
            return Err(Error::InvalidConfig(format!(
                "partition sizes {n_train}/{n_val}/{n_test} do not sum to vocabulary size {}",
                vocabulary.len()
            )));
        }
        let mut labels = vocabulary.labels().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = labels.split_off(n_train + n_val);
        let val = labels.split_off(n_train);
        Ok(Self {
            train: labels,
            val,
            test,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// Pairwise disjoint and covering `vocabulary` exactly.
    pub fn validate(&self, vocabulary: &Vocabulary) -> Result<()> {
        let mut seen = BTreeSet::new();
        for label in self.train.iter().chain(&self.val).chain(&self.test) {
            if !vocabulary.contains(label) {
                return Err(Error::Schema(format!("partition label '{label}' not in vocabulary")));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Schema(format!("partition lists '{label}' more than once")));
            }
        }
        if seen.len() != vocabulary.len() {
            return Err(Error::Schema(format!(
                "partition covers {} of {} labels",
                seen.len(),
                vocabulary.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Main,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRef {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl From<&SpatialTriplet> for TripletRef {
    fn from(t: &SpatialTriplet) -> Self {
        Self {
            subject: t.subject.clone(),
            relation: t.relation,
            object: t.object.clone(),
        }
    }
}

impl From<&TripletRef> for SpatialTriplet {
    fn from(t: &TripletRef) -> Self {
        SpatialTriplet::new(t.subject.clone(), t.relation, t.object.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub natural_triplets: usize,
    /// Label-level natural triplets usable for training (train objects only for unseen).
    pub train_label_triplets: usize,
    /// Validation candidates before the natural filter (unseen only).
    pub val_candidates_unfiltered: Option<u64>,
    pub val_candidates_natural: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub split_kind: SplitKind,
    pub seed: u64,
    pub val_size: usize,
    pub train_objects: Vec<String>,
    pub val_objects: Vec<String>,
    pub test_objects: Vec<String>,
    pub test_triplets: Vec<TripletRef>,
    pub val_triplets: Vec<TripletRef>,
    pub stats: SplitStats,
}

impl SplitManifest {
    pub fn test_set(&self) -> Vec<SpatialTriplet> {
        self.test_triplets.iter().map(SpatialTriplet::from).collect()
    }

    pub fn val_set(&self) -> Vec<SpatialTriplet> {
        self.val_triplets.iter().map(SpatialTriplet::from).collect()
    }

    /// Objects the training sampler may use; `None` means unrestricted.
    pub fn allowed_training_objects(&self) -> Option<BTreeSet<String>> {
        match self.split_kind {
            SplitKind::Main => None,
            SplitKind::Unseen => Some(self.train_objects.iter().cloned().collect()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Candidate validation triplets for the unseen split before natural
/// filtering. Val-val pairs are counted as ordered pairs, which is what
/// reproduces 6,580 for a 45/5 partition.
pub fn count_candidate_val_triplets(n_train: u64, n_val: u64) -> u64 {
    (2 * n_train * n_val + n_val * n_val.saturating_sub(1)) * Relation::ALL.len() as u64
}

fn sample_sorted(candidates: &[SpatialTriplet], n: usize, seed: u64) -> Result<Vec<SpatialTriplet>> {
    if candidates.len() < n {
        return Err(Error::NotEnoughTriplets {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<SpatialTriplet> = rand::seq::index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    picked.sort();
    Ok(picked)
}

pub fn build_main_split(natural: &TripletTable, val_size: usize, seed: u64) -> Result<SplitManifest> {
    if natural.is_empty() {
        return Err(Error::NotEnoughTriplets {
            requested: val_size.max(1),
            available: 0,
        });
    }
    let test: Vec<SpatialTriplet> = natural.triplets().cloned().collect();
    let val = sample_sorted(&test, val_size, seed)?;
    let labels: Vec<String> = natural
        .triplets()
        .flat_map(|t| [t.subject.clone(), t.object.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(SplitManifest {
        provenance: None,
        split_kind: SplitKind::Main,
        seed,
        val_size,
        train_objects: labels.clone(),
        val_objects: labels.clone(),
        test_objects: labels,
        test_triplets: test.iter().map(TripletRef::from).collect(),
        val_triplets: val.iter().map(TripletRef::from).collect(),
        stats: SplitStats {
            natural_triplets: natural.len(),
            train_label_triplets: natural.len(),
            val_candidates_unfiltered: None,
            val_candidates_natural: natural.len(),
            notes: vec!["main split: object lists are the full label set".into()],
        },
    })
}

/// Natural validation candidates: at least one val object, no test object.
pub fn unseen_val_candidates(natural: &TripletTable, partition: &ObjectPartition) -> Vec<SpatialTriplet> {
    let val: BTreeSet<&str> = partition.val.iter().map(String::as_str).collect();
    let test: BTreeSet<&str> = partition.test.iter().map(String::as_str).collect();
    natural
        .triplets()
        .filter(|t| {
            let (s, o) = (t.subject.as_str(), t.object.as_str());
            !test.contains(s) && !test.contains(o) && (val.contains(s) || val.contains(o))
        })
        .cloned()
        .collect()
}

pub fn build_unseen_split(
    natural: &TripletTable,
    vocabulary: &Vocabulary,
    partition: &ObjectPartition,
    val_size: usize,
    seed: u64,
) -> Result<SplitManifest> {
    partition.validate(vocabulary)?;
    let test_objs: BTreeSet<&str> = partition.test.iter().map(String::as_str).collect();
    let train_objs: BTreeSet<&str> = partition.train.iter().map(String::as_str).collect();

    let test: Vec<SpatialTriplet> = natural
        .triplets()
        .filter(|t| test_objs.contains(t.subject.as_str()) && test_objs.contains(t.object.as_str()))
        .cloned()
        .collect();
    let candidates = unseen_val_candidates(natural, partition);
    let val = sample_sorted(&candidates, val_size, seed)?;
    let train_label_triplets = natural
        .triplets()
        .filter(|t| train_objs.contains(t.subject.as_str()) && train_objs.contains(t.object.as_str()))
        .count();
    let n_train = partition.train.len() as u64;

    Ok(SplitManifest {
        provenance: None,
        split_kind: SplitKind::Unseen,
        seed,
        val_size,
        train_objects: partition.train.clone(),
        val_objects: partition.val.clone(),
        test_objects: partition.test.clone(),
        test_triplets: test.iter().map(TripletRef::from).collect(),
        val_triplets: val.iter().map(TripletRef::from).collect(),
        stats: SplitStats {
            natural_triplets: natural.len(),
            train_label_triplets,
            val_candidates_unfiltered: Some(count_candidate_val_triplets(
                n_train,
                partition.val.len() as u64,
            )),
            val_candidates_natural: candidates.len(),
            notes: vec![format!(
                "train_label_triplets counts label-level triplets over train objects \
                 (at most {} for {} objects); published unique-train-caption totals \
                 use a different unit and are not reproduced here",
                n_train * n_train.saturating_sub(1) * Relation::ALL.len() as u64,
                n_train
            )],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_table(n: usize) -> TripletTable {
        let labels = crate::labels::COCO80;
        (0..n)
            .map(|i| {
                let r = Relation::ALL[i % 14];
                (SpatialTriplet::new(labels[i / 14], r, labels[79 - i / 14]), 1 + i as u64)
            })
            .collect()
    }

    #[test]
    fn candidate_formula() {
        assert_eq!(count_candidate_val_triplets(45, 5), 6_580);
        assert_eq!(count_candidate_val_triplets(0, 2), 28);
        assert_eq!(count_candidate_val_triplets(3, 0), 0);
    }

    #[test]
    fn main_split_subsamples_validation() {
        let table = fixture_table(10);
        let m = build_main_split(&table, 3, 11).unwrap();
        assert_eq!(m.test_triplets.len(), 10);
        assert_eq!(m.val_triplets.len(), 3);
        let test: BTreeSet<_> = m.test_set().into_iter().collect();
        assert!(m.val_set().iter().all(|t| test.contains(t)));
        assert_eq!(m, build_main_split(&table, 3, 11).unwrap());
        assert!(matches!(
            build_main_split(&table, 11, 1),
            Err(Error::NotEnoughTriplets { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn canonical_partition_is_valid() {
        let p = ObjectPartition::canonical();
        p.validate(&Vocabulary::coco80()).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (45, 5, 30));
    }

    #[test]
    fn random_partition_is_seeded_and_valid() {
        let v = Vocabulary::coco80();
        let a = ObjectPartition::random(&v, (45, 5, 30), 3).unwrap();
        a.validate(&v).unwrap();
        assert_eq!(a, ObjectPartition::random(&v, (45, 5, 30), 3).unwrap());
        assert_ne!(a, ObjectPartition::random(&v, (45, 5, 30), 4).unwrap());
        assert!(ObjectPartition::random(&v, (45, 5, 31), 3).is_err());
    }

    #[test]
    fn unseen_split_respects_partition() {
        let v = Vocabulary::coco80();
        let table: TripletTable = [
            (SpatialTriplet::new("cat", Relation::LeftOf, "dog"), 4),
            (SpatialTriplet::new("cat", Relation::LeftOf, "person"), 9),
            (SpatialTriplet::new("tv", Relation::Above, "person"), 2),
            (SpatialTriplet::new("cake", Relation::Below, "vase"), 2),
            (SpatialTriplet::new("tv", Relation::Above, "dog"), 2),
            (SpatialTriplet::new("person", Relation::Above, "chair"), 2),
        ]
        .into_iter()
        .collect();
        let p = ObjectPartition::canonical();
        let m = build_unseen_split(&table, &v, &p, 2, 5).unwrap();
        assert_eq!(m.test_set(), vec![SpatialTriplet::new("cat", Relation::LeftOf, "dog")]);
        assert_eq!(
            m.val_set(),
            vec![
                SpatialTriplet::new("cake", Relation::Below, "vase"),
                SpatialTriplet::new("tv", Relation::Above, "person"),
            ]
        );
        assert_eq!(m.stats.val_candidates_unfiltered, Some(6_580));
        assert_eq!(m.stats.train_label_triplets, 1);
        match build_unseen_split(&table, &v, &p, 3, 5) {
            Err(Error::NotEnoughTriplets { requested: 3, available: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
