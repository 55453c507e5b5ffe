use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::FftNum;

/// Floating point type the solver is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + FftNum + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for "sums to one" checks on `len` cells: the requested
    /// tolerance, widened to the rounding floor of the type.
    fn sum_tolerance(requested: f64, len: usize) -> Self {
        let floor = Self::epsilon() * Self::of_usize(len.max(1)).sqrt() * Self::lit(8.0);
        Self::lit(requested).max(floor)
    }

    /// A finite stand-in for `log(0)` whose exponential is exactly zero.
    fn log_zero() -> Self {
        Self::min_positive_value().ln() * Self::lit(2.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(x)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<S: Scalar>(values: impl Iterator<Item = S> + Clone) -> S {
    let max = values.clone().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Sum of absolute differences.
pub fn l1_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

/// Largest absolute difference.
pub fn sup_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
