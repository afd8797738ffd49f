//! The floating-point abstraction every numeric routine in the crate is
//! written against.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for parameters, losses and weights.
///
/// Implemented for `f32` and `f64`. The finite-difference and exactness
/// guarantees documented throughout the crate assume `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + FromStr + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Softmax computed through [`log_sum_exp`].
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_inputs() {
        let v = log_sum_exp(&[1000.0_f64, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one_in_both_precisions() {
        let p = softmax(&[0.3_f64, -2.0, 5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[0.3_f32, -2.0, 5.0]);
        assert!((q.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
