//! Spatial-relation caption datasets built from COCO-style object annotations,
//! and spatial-correctness scoring for text-to-image outputs.
//!
//! Box geometry is generic over [`Scalar`]; the dataset and evaluation
//! pipeline runs on `f64` pixel coordinates (see the aliases below).

pub mod captions;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod reports;
pub mod sampler;
pub mod scalar;
pub mod simulate;
pub mod splits;
pub mod triplets;

pub use error::{Error, Result};
pub use geometry::{Relation, RelationKind, RelationSet};
pub use scalar::Scalar;
pub use triplets::{SpatialTriplet, TripletTable};

/// Exact rational coordinates.
pub type Rational = num_rational::Ratio<i64>;

pub type BBoxF64 = geometry::BBox<f64>;
pub type BBoxF32 = geometry::BBox<f32>;
pub type BBoxExact = geometry::BBox<Rational>;

pub type RelationConfigF64 = geometry::RelationConfig<f64>;
pub type RelationConfigExact = geometry::RelationConfig<Rational>;
