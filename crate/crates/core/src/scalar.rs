//! Scalar abstraction for strength arithmetic.
//!
//! Strengths are means of integer scores in 1..=5, so they are fractional.
//! All averaging and metric code is generic over the scalar so the same
//! algorithms run on `f32`/`f64` and on exact rationals
//! ([`num_rational::Ratio`]) when exact arithmetic is wanted.

use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Any number type usable as an edge strength: closed under the four
/// arithmetic operations, orderable, and convertible from small integers.
///
/// Implemented for `f32`, `f64` and `Ratio<i64>` via the blanket impl.
pub trait Scalar:
    Num + Signed + FromPrimitive + ToPrimitive + PartialOrd + Clone + std::fmt::Debug + Send + Sync
{
    /// Lift an integer score (1..=5) into the scalar domain.
    fn from_score(value: u8) -> Self {
        Self::from_u8(value).expect("score fits in any scalar")
    }

    /// Lift a count into the scalar domain for divisions.
    fn from_count(value: usize) -> Self {
        Self::from_usize(value).expect("count fits in any scalar")
    }
}

impl<T> Scalar for T where
    T: Num
        + Signed
        + FromPrimitive
        + ToPrimitive
        + PartialOrd
        + Clone
        + std::fmt::Debug
        + Send
        + Sync
{
}

/// Floating-point scalar, for metrics that need `sqrt` (RMSE).
pub trait Real: Scalar + num_traits::Float {}

impl<T> Real for T where T: Scalar + num_traits::Float {}

/// Arithmetic mean of a nonempty slice of integer scores.
///
/// Exact when `S` is a rational type: `mean_of_scores::<Ratio<i64>>(&[1, 1, 2])`
/// is exactly 4/3.
pub fn mean_of_scores<S: Scalar>(scores: &[u8]) -> S {
    debug_assert!(!scores.is_empty());
    let sum = scores
        .iter()
        .fold(S::zero(), |acc, &s| acc + S::from_score(s));
    sum / S::from_count(scores.len())
}

/// Arithmetic mean of a nonempty slice of scalars.
pub fn mean<S: Scalar>(values: &[S]) -> S {
    debug_assert!(!values.is_empty());
    let sum = values.iter().fold(S::zero(), |acc, v| acc + v.clone());
    sum / S::from_count(values.len())
}
