//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the losses, models and metrics are generic over.
///
/// Implemented for `f32` and `f64`. Tolerance-sensitive checks (finite
/// differences, objective equivalence) are meant to run in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` literal; infallible for the supported types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Applies [`sigmoid`] to every element.
    #[inline]
    fn sigmoid_in_place(z: &mut [Self]) {
        for v in z.iter_mut() {
            *v = sigmoid(*v);
        }
    }
}

impl Scalar for f64 {}

impl Scalar for f32 {
    // Branch-free polynomial exp; unlike the libm call this vectorizes.
    #[inline]
    fn sigmoid_in_place(z: &mut [f32]) {
        for v in z.iter_mut() {
            *v = 1.0 / (1.0 + exp_f32(-*v));
        }
    }
}

/// `e^x` for `f32`, relative error below `2e-7` on the clamped range
/// `[-87, 88]`.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0; // 1.5 * 2^23: rounds to an integer in the low mantissa bits
    let x = x.clamp(-87.0, 88.0);
    let kf = x * std::f32::consts::LOG2_E + SHIFT;
    let k = kf - SHIFT;
    // ln 2 split in two so `k * hi` is exact.
    let r = x - k * 0.693_145_75 - k * 1.428_606_8e-6;
    let scale = f32::from_bits(kf.to_bits().wrapping_sub(0x4B40_0000).wrapping_add(127) << 23);
    let p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0)))))));
    p * scale
}

/// Logistic function. `exp(-z)` overflowing to infinity yields exactly 0.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}
