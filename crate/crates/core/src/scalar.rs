//! Scalar abstraction for box coordinates.
//!
//! Geometry is written once against [`Scalar`] and instantiated for `f32`,
//! `f64` and exact rationals (`Ratio<i64>`). The rational instantiation is
//! what the test suites use to check floating-point results without
//! tolerance.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Coordinate type usable by the box predicates.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `false` for NaN and infinities; always `true` for exact types.
    fn is_finite_value(self) -> bool;

    /// Conversion from `f64`; `None` when the value is not representable.
    fn from_f64_value(v: f64) -> Option<Self>;

    fn to_f64_value(self) -> f64;

    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn min_value_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_value_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    fn from_f64_value(v: f64) -> Option<Self> {
        Some(v)
    }

    fn to_f64_value(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    fn from_f64_value(v: f64) -> Option<Self> {
        let narrowed = v as f32;
        (narrowed.is_finite() || !v.is_finite()).then_some(narrowed)
    }

    fn to_f64_value(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for Ratio<i64> {
    fn is_finite_value(self) -> bool {
        true
    }

    fn from_f64_value(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        <Ratio<i64> as FromPrimitive>::from_f64(v)
    }

    fn to_f64_value(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}
