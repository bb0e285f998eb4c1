//! Scalar abstraction shared by the numerical modules.
//!
//! Everything that does floating point work (topic model, dialect scorer,
//! diagnostics, effects) is written against [`Scalar`] so the same code runs
//! in `f64` (the default, used by the pipeline) or `f32`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_usize(n: usize) -> Self;
    /// Smallest positive normal value.
    fn tiny() -> Self;
    fn neg_infinity() -> Self;
    fn is_finite_value(self) -> bool;
}

macro_rules! impl_scalar(
    ( $( $t:ident ),* ) => {
        $(
            impl Scalar for $t {
                #[inline]
                fn of(x: f64) -> $t {
                    x as $t
                }
                #[inline]
                fn as_f64(self) -> f64 {
                    ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
                }
                #[inline]
                fn of_usize(n: usize) -> $t {
                    n as $t
                }
                #[inline]
                fn tiny() -> $t {
                    <$t as Float>::min_positive_value()
                }
                #[inline]
                fn neg_infinity() -> $t {
                    <$t as Float>::neg_infinity()
                }
                #[inline]
                fn is_finite_value(self) -> bool {
                    <$t as Float>::is_finite(self)
                }
            }
        )*
    }
);

impl_scalar!(f32, f64);

/// Numerically stable `log Σ exp(x_i)`.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let max = xs
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |m, x| if x > m { x } else { m });
    if !max.is_finite_value() {
        return max;
    }
    let s = xs.into_iter().fold(T::zero(), |acc, x| acc + (x - max).exp());
    max + s.ln()
}

/// Softmax of `[eta; 0]`, the K-vector of topic proportions for a (K-1)-vector
/// of free logits with the last logit pinned at zero.
pub fn softmax_pinned<T: Scalar>(eta: &[T]) -> Vec<T> {
    let max = eta.iter().fold(T::zero(), |m, &x| if x > m { x } else { m });
    let mut out: Vec<T> = eta.iter().map(|&x| (x - max).exp()).collect();
    out.push((-max).exp());
    let total = out.iter().fold(T::zero(), |a, &b| a + b);
    for v in &mut out {
        *v /= total;
    }
    out
}
