//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the market models are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into the scalar type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Machine epsilon expressed as a relative tolerance scale.
    fn eps() -> Self {
        Float::epsilon()
    }

    /// `sqrt(3)`, the half-width of a unit-variance uniform distribution.
    fn sqrt3() -> Self {
        Self::lit(3.0).sqrt()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `max(x, 0)`.
#[inline]
pub fn pos<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Pairwise (cascade) summation. The reduction tree only depends on the
/// slice length, so results are bit-stable for a given input order.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn length(&self) -> T {
        self.hi - self.lo
    }

    /// `self ⊆ other` for half-open intervals.
    pub fn is_subset_of(&self, other: &Interval<T>) -> bool {
        self.lo >= other.lo && self.hi <= other.hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn pos_part() {
        assert_eq!(pos(-1.5_f64), 0.0);
        assert_eq!(pos(2.0_f32), 2.0);
    }

    #[test]
    fn interval_is_half_open() {
        let iv = Interval::new(0.0, 1.0);
        assert!(iv.contains(0.0));
        assert!(!iv.contains(1.0));
        assert!(Interval::new(0.2, 0.5).is_subset_of(&iv));
    }
}
