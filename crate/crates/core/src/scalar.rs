//! Scalar abstraction shared by the model, evaluation and symmetry code.
//!
//! Everything that only needs field arithmetic (probabilities, returns,
//! kernel comparisons) is written against [`Scalar`], so the toy games can be
//! evaluated in `f64`, `f32`, or exactly in rationals. Gradient-based training
//! and the hash network are `f64` only.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Numeric type usable for model tables and exact evaluation.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Absolute tolerance used for "equal within round-off" comparisons.
    fn default_tolerance() -> f64;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("integer fits scalar") / Self::from_i64(den).expect("integer fits scalar")
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite value fits scalar")
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `|self - other| <= tol`, evaluated in `f64` unless the type is exact.
    fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.clone() - other.clone()).abs().as_f64() <= tol
    }
}

impl Scalar for f64 {
    fn default_tolerance() -> f64 {
        1e-12
    }
}

impl Scalar for f32 {
    fn default_tolerance() -> f64 {
        1e-5
    }
}

impl Scalar for Ratio<i64> {
    fn default_tolerance() -> f64 {
        0.0
    }

    fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        if tol == 0.0 {
            self == other
        } else {
            (self - other).abs().as_f64() <= tol
        }
    }
}

pub(crate) fn sum<S: Scalar>(xs: impl IntoIterator<Item = S>) -> S {
    xs.into_iter().fold(S::zero(), |acc, x| acc + x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_comparisons_are_exact() {
        let a = Ratio::<i64>::from_ratio(1, 3);
        let b = Ratio::<i64>::from_ratio(2, 6);
        assert!(a.approx_eq(&b, 0.0));
        assert!(!a.approx_eq(&Ratio::from_ratio(1, 4), 0.0));
        assert!((0.1f64 + 0.2).approx_eq(&0.3, 1e-12));
    }
}
