//! Bounding boxes, the fourteen spatial relation predicates, and the
//! relation-consistent transforms (horizontal flip, crop) used by augmentation.
//!
//! Coordinates follow the image convention: the origin is the top-left corner
//! and `y` grows downward, so "above" means a smaller vertical centroid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box in corner form `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    x0: T,
    y0: T,
    x1: T,
    y1: T,
}

impl<T: Scalar> BBox<T> {
    /// Builds a box, rejecting non-finite, negative or inverted coordinates.
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        let finite = [x0, y0, x1, y1].iter().all(|c| c.is_finite_value());
        if !finite || x0 < T::zero() || y0 < T::zero() || x1 < x0 || y1 < y0 {
            return Err(Error::InvalidBox(format!(
                "({x0:?}, {y0:?}, {x1:?}, {y1:?})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// COCO-style `(x, y, width, height)`.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x0(&self) -> T {
        self.x0
    }

    pub fn y0(&self) -> T {
        self.y0
    }

    pub fn x1(&self) -> T {
        self.x1
    }

    pub fn y1(&self) -> T {
        self.y1
    }

    pub fn corners(&self) -> [T; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn to_xywh(&self) -> [T; 4] {
        [self.x0, self.y0, self.width(), self.height()]
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> (T, T) {
        centroid(self)
    }

    /// Overlap region, or `None` when the boxes do not touch at all.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let x0 = self.x0.max_value_of(other.x0);
        let y0 = self.y0.max_value_of(other.y0);
        let x1 = self.x1.min_value_of(other.x1);
        let y1 = self.y1.min_value_of(other.y1);
        (x1 >= x0 && y1 >= y0).then_some(Self { x0, y0, x1, y1 })
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: T, height: T) -> Self {
        let clamp = |v: T, hi: T| v.max_value_of(T::zero()).min_value_of(hi);
        Self {
            x0: clamp(self.x0, width),
            y0: clamp(self.y0, height),
            x1: clamp(self.x1, width),
            y1: clamp(self.y1, height),
        }
    }

    pub fn within(&self, width: T, height: T) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    /// `true` when `inner` lies inside this box grown by `tolerance` on all sides.
    pub fn contains_with_tolerance(&self, inner: &Self, tolerance: T) -> bool {
        self.x0 - tolerance <= inner.x0
            && self.y0 - tolerance <= inner.y0
            && self.x1 + tolerance >= inner.x1
            && self.y1 + tolerance >= inner.y1
    }

    pub fn cast<U: Scalar>(&self) -> Option<BBox<U>> {
        let conv = |v: T| U::from_f64_value(v.to_f64_value());
        BBox::new(
            conv(self.x0)?,
            conv(self.y0)?,
            conv(self.x1)?,
            conv(self.y1)?,
        )
        .ok()
    }
}

impl<T: Scalar> fmt::Display for BBox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x0.to_f64_value(),
            self.y0.to_f64_value(),
            self.x1.to_f64_value(),
            self.y1.to_f64_value()
        )
    }
}

impl<T: Scalar> Serialize for BBox<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.corners().map(|c| c.to_f64_value()).serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for BBox<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = <[f64; 4]>::deserialize(d)?;
        let conv = |v: f64| {
            T::from_f64_value(v)
                .ok_or_else(|| D::Error::custom(format!("coordinate {v} not representable")))
        };
        BBox::new(conv(raw[0])?, conv(raw[1])?, conv(raw[2])?, conv(raw[3])?)
            .map_err(D::Error::custom)
    }
}

/// Relation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationKind {
    Projective,
    Topological,
    Scale,
}

/// One of the fourteen spatial relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Overlapping,
    Separated,
    Surrounding,
    Inside,
    Taller,
    Shorter,
    Wider,
    Narrower,
    Larger,
    Smaller,
}

impl Relation {
    pub const ALL: [Relation; 14] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::Overlapping,
        Relation::Separated,
        Relation::Surrounding,
        Relation::Inside,
        Relation::Taller,
        Relation::Shorter,
        Relation::Wider,
        Relation::Narrower,
        Relation::Larger,
        Relation::Smaller,
    ];

    /// The seven opposite pairs, first member in declaration order.
    pub const OPPOSITE_PAIRS: [(Relation, Relation); 7] = [
        (Relation::LeftOf, Relation::RightOf),
        (Relation::Above, Relation::Below),
        (Relation::Overlapping, Relation::Separated),
        (Relation::Surrounding, Relation::Inside),
        (Relation::Taller, Relation::Shorter),
        (Relation::Wider, Relation::Narrower),
        (Relation::Larger, Relation::Smaller),
    ];

    pub fn opposite(self) -> Relation {
        use Relation::*;
        match self {
            LeftOf => RightOf,
            RightOf => LeftOf,
            Above => Below,
            Below => Above,
            Overlapping => Separated,
            Separated => Overlapping,
            Surrounding => Inside,
            Inside => Surrounding,
            Taller => Shorter,
            Shorter => Taller,
            Wider => Narrower,
            Narrower => Wider,
            Larger => Smaller,
            Smaller => Larger,
        }
    }

    /// Relation that holds with subject and object swapped. Overlapping and
    /// separated are symmetric; every other relation maps to its opposite.
    pub fn converse(self) -> Relation {
        match self {
            Relation::Overlapping | Relation::Separated => self,
            other => other.opposite(),
        }
    }

    pub fn kind(self) -> RelationKind {
        use Relation::*;
        match self {
            LeftOf | RightOf | Above | Below => RelationKind::Projective,
            Overlapping | Separated | Surrounding | Inside => RelationKind::Topological,
            _ => RelationKind::Scale,
        }
    }

    /// Relation obtained by mirroring both boxes horizontally.
    pub fn flipped(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Relation::*;
        match self {
            LeftOf => "left_of",
            RightOf => "right_of",
            Above => "above",
            Below => "below",
            Overlapping => "overlapping",
            Separated => "separated",
            Surrounding => "surrounding",
            Inside => "inside",
            Taller => "taller",
            Shorter => "shorter",
            Wider => "wider",
            Narrower => "narrower",
            Larger => "larger",
            Smaller => "smaller",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRelation(s.to_string()))
    }
}

/// Compact set of relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct RelationSet(u16);

impl RelationSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, r: Relation) {
        self.0 |= 1 << r.index();
    }

    pub fn contains(&self, r: Relation) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Relation> + '_ {
        Relation::ALL.into_iter().filter(|r| self.contains(*r))
    }

    pub fn to_vec(&self) -> Vec<Relation> {
        self.iter().collect()
    }
}

impl FromIterator<Relation> for RelationSet {
    fn from_iter<I: IntoIterator<Item = Relation>>(iter: I) -> Self {
        let mut set = Self::empty();
        for r in iter {
            set.insert(r);
        }
        set
    }
}

/// Predicate knobs. Separation is always `IoU == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationConfig<T> {
    /// Slack in pixels applied to the containing box for surrounding/inside.
    pub containment_tolerance: T,
}

impl<T: Scalar> RelationConfig<T> {
    pub fn new(containment_tolerance: T) -> Result<Self> {
        if !containment_tolerance.is_finite_value() || containment_tolerance < T::zero() {
            return Err(Error::InvalidConfig(format!(
                "containment tolerance must be finite and >= 0, got {containment_tolerance:?}"
            )));
        }
        Ok(Self {
            containment_tolerance,
        })
    }
}

impl<T: Scalar> Default for RelationConfig<T> {
    fn default() -> Self {
        Self {
            containment_tolerance: T::zero(),
        }
    }
}

pub fn centroid<T: Scalar>(b: &BBox<T>) -> (T, T) {
    ((b.x0 + b.x1) / T::two(), (b.y0 + b.y1) / T::two())
}

/// Intersection over union; zero for disjoint boxes and for two zero-area boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection(b).map_or(T::zero(), |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    inter / union
}

/// Evaluates `f_r(subject, object)`.
pub fn holds<T: Scalar>(
    relation: Relation,
    subject: &BBox<T>,
    object: &BBox<T>,
    cfg: &RelationConfig<T>,
) -> bool {
    use Relation::*;
    let (sx, sy) = centroid(subject);
    let (ox, oy) = centroid(object);
    let tol = cfg.containment_tolerance;
    match relation {
        LeftOf => sx < ox,
        RightOf => sx > ox,
        Above => sy < oy,
        Below => sy > oy,
        Overlapping => iou(subject, object) > T::zero(),
        Separated => iou(subject, object) == T::zero(),
        Surrounding => subject.contains_with_tolerance(object, tol),
        Inside => object.contains_with_tolerance(subject, tol),
        Taller => subject.height() > object.height(),
        Shorter => subject.height() < object.height(),
        Wider => subject.width() > object.width(),
        Narrower => subject.width() < object.width(),
        Larger => subject.area() > object.area(),
        Smaller => subject.area() < object.area(),
    }
}

/// All relations `r` with `f_r(subject, object)` true.
pub fn valid_relations<T: Scalar>(
    subject: &BBox<T>,
    object: &BBox<T>,
    cfg: &RelationConfig<T>,
) -> RelationSet {
    Relation::ALL
        .into_iter()
        .filter(|r| holds(*r, subject, object, cfg))
        .collect()
}

/// Mirrors a box about the vertical centre line of an image of width `image_width`.
pub fn flip_h<T: Scalar>(b: &BBox<T>, image_width: T) -> Result<BBox<T>> {
    if b.x1 > image_width {
        return Err(Error::OutOfBounds(format!(
            "box {b} exceeds image width {}",
            image_width.to_f64_value()
        )));
    }
    BBox::new(image_width - b.x1, b.y0, image_width - b.x0, b.y1)
}

/// Clips `b` to `window` and re-expresses it in window coordinates.
/// Returns `None` when the clipped region has zero area.
pub fn crop<T: Scalar>(b: &BBox<T>, window: &BBox<T>) -> Option<BBox<T>> {
    let clipped = b.intersection(window)?;
    if clipped.area() <= T::zero() {
        return None;
    }
    BBox::new(
        clipped.x0 - window.x0,
        clipped.y0 - window.y0,
        clipped.x1 - window.x0,
        clipped.y1 - window.y0,
    )
    .ok()
}
