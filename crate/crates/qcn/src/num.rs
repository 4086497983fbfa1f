//! Scalar abstraction. The whole engine is generic over the floating-point
//! type; `f64` is the default precision (see the aliases at the crate root)
//! and `f32` is available for memory-bound nets.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the engine operates on.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + fmt::Debug
    + fmt::Display
    + FromStr
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent ordinary finite values,
/// which cannot happen for the provided `f32`/`f64` impls.
#[inline]
pub fn real<T: Scalar>(value: f64) -> T {
    T::from_f64(value).expect("finite constant must be representable")
}

/// Tolerance used for probability and composition sums.
#[inline]
pub fn sum_tolerance<T: Scalar>() -> T {
    real(1e-9)
}

/// Finite and strictly greater than zero (false for NaN and infinities).
#[inline]
pub fn positive<T: Scalar>(value: T) -> bool {
    value.is_finite() && value > T::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_round_trips_constants() {
        let x: f64 = real(4.0);
        assert_eq!(x, 4.0);
        let y: f32 = real(0.5);
        assert_eq!(y, 0.5);
    }
}
