//! Scalar abstraction for the cohort metrics.
//!
//! Means, proportions and disagreement scores are all ratios of counts, so
//! the metric code is written once over [`Scalar`] and instantiated with
//! `f64` for reporting or with an exact rational for verification.

use num_traits::{FromPrimitive, Num, ToPrimitive};
use std::fmt::Debug;

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    /// `num / den`; callers guarantee `den > 0`.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn abs_diff(self, other: Self) -> Self {
        if self >= other {
            self - other
        } else {
            other - self
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Arithmetic mean; `None` for an empty input.
pub fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut n = 0usize;
    let mut sum = T::zero();
    for v in values {
        sum = sum + v;
        n += 1;
    }
    (n > 0).then(|| sum / T::from_count(n))
}

/// Median; the mean of the two central values for even lengths.
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable scalars"));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / T::from_count(2)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn mean_and_median() {
        assert_eq!(mean([3.0, 4.0, 5.0]), Some(4.0));
        assert_eq!(mean::<f64>([]), None);
        assert_eq!(median(&[4.5, 2.0, 3.0]), Some(3.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), Some(2.5));
    }

    #[test]
    fn rational_instantiation_is_exact() {
        let third: Ratio<i64> = Scalar::ratio(1, 3);
        assert_eq!(third + third + third, Ratio::from_integer(1));
        assert_eq!(
            median(&[Ratio::new(1, 3), Ratio::new(2, 3)]),
            Some(Ratio::new(1, 2))
        );
    }
}
