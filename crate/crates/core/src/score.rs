//! Scalar abstraction for selector scores.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};

/// Numeric type the selector heuristics accumulate scores in.
///
/// Scores are sums of small weights scaled by 2 and 1/2, so every type here
/// must represent halves exactly. Implemented for `f32`, `f64` and
/// `Ratio<i64>`.
pub trait Score: Num + Copy + PartialOrd + Debug + FromPrimitive + Send + Sync {
    /// Builds a score from a ratio of small integers.
    fn ratio(numer: i64, denom: i64) -> Self {
        Self::from_i64(numer).expect("score numerator") / Self::from_i64(denom).expect("score denominator")
    }

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Score for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Score for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Score for num_rational::Rational64 {
    fn from_f64_lossy(v: f64) -> Self {
        num_rational::Rational64::approximate_float(v).expect("finite ratio")
    }

    fn to_f64_lossy(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn halves_are_exact() {
        assert_eq!(f64::ratio(1, 2), 0.5);
        assert_eq!(f32::ratio(3, 2), 1.5);
        assert_eq!(Rational64::ratio(1, 2), Rational64::new(1, 2));
    }

    #[test]
    fn rational_round_trip() {
        let r = Rational64::from_f64_lossy(0.75);
        assert_eq!(r, Rational64::new(3, 4));
        assert_eq!(r.to_f64_lossy(), 0.75);
    }
}
