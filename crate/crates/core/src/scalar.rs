//! Scalar abstraction and the numerically stable primitives shared by every
//! score function.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts `T` back to `f64`.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Max-shifted log-sum-exp. Empty input yields `-inf`.
pub fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log-sum-exp over the selected indices of `xs`.
pub fn logsumexp_at<T: Scalar>(xs: &[T], idx: impl IntoIterator<Item = usize> + Clone) -> T {
    let max = idx
        .clone()
        .into_iter()
        .map(|i| xs[i])
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || !max.is_finite() {
        return max;
    }
    let sum: T = idx.into_iter().map(|i| (xs[i] - max).exp()).sum();
    max + sum.ln()
}

/// `log(1 - exp(x))` for `x <= 0`.
///
/// Switches between `log(-expm1(x))` and `log1p(-exp(x))` at `-ln 2` so that
/// neither branch cancels.
#[inline]
pub fn log1mexp<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        return T::nan();
    }
    if x == T::neg_infinity() {
        return T::zero();
    }
    if x > -cast::<T>(std::f64::consts::LN_2) {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// In-place softmax; returns the log normalizer.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) -> T {
    let lse = logsumexp(xs);
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

/// Index of the maximum over `candidates`, ties broken by the lowest index.
pub fn argmax_by<T: Scalar>(values: &[T], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        best = match best {
            None => Some(i),
            Some(b) if values[i] > values[b] || (values[i] == values[b] && i < b) => Some(i),
            keep => keep,
        };
    }
    best
}

/// Indices sorted by value descending, ties by index ascending.
pub fn argsort_desc<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}
