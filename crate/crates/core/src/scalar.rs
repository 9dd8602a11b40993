//! Floating point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the forest, autodiff engine and optimizers are generic over.
///
/// Implemented for `f32` and `f64`. Training defaults to `f64`; the
/// hypergradient checks need the extra headroom.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lower clip applied to probabilities before taking logs in losses.
    fn log_clip() -> Self;

    /// Converts an `f64` literal. Panics only for values unrepresentable in `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Numerically stable logistic function.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn log_clip() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    // 1 - 1e-12 rounds to 1 in single precision.
    #[inline]
    fn log_clip() -> Self {
        1e-7
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(0.0f64.sigmoid(), 0.5);
        assert!((2.0f64.sigmoid() + (-2.0f64).sigmoid() - 1.0).abs() < 1e-15);
        assert!((-800.0f64).sigmoid() >= 0.0);
        assert_eq!(800.0f64.sigmoid(), 1.0);
        assert_eq!(0.0f32.sigmoid(), 0.5);
    }

    #[test]
    fn clip_keeps_complement_below_one() {
        assert!(1.0f32 - f32::log_clip() < 1.0);
        assert!(1.0f64 - f64::log_clip() < 1.0);
    }
}
