//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the encoder, losses, index and diagnostics are generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Slack allowed when checking that a vector lies on the unit sphere.
    fn unit_norm_tolerance() -> Self;

    /// Short tag written into persisted files.
    const NAME: &'static str;

    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn unit_norm_tolerance() -> Self {
        1e-6
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn unit_norm_tolerance() -> Self {
        1e-5
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(0.25).as_f64(), 0.25);
        assert_eq!(f32::of(0.5).as_f64(), 0.5);
    }

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(l2_norm(&[3.0f64, 4.0]), 5.0);
    }
}
