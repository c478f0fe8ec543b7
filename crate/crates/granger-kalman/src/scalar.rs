//! Scalar abstraction for the numerical core.
//!
//! Everything in this crate is generic over [`Scalar`], which bundles the
//! real-field operations required by `nalgebra` with conversions from and to
//! `f64`. Both `f32` and `f64` satisfy the bound; the crate root exposes
//! `f64` aliases for the common case. Tolerances are stored in the scalar
//! type of the computation, while diagnostic payloads (reports, errors) are
//! always converted to `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar type usable throughout the library.
///
/// This is a pure marker trait: anything that is an ordered real field in the
/// `nalgebra` sense, is `Copy`, and converts from/to primitive numbers
/// qualifies. `f32` and `f64` are covered by the blanket implementation.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy {}

/// Converts an `f64` constant (tolerance defaults, literal coefficients)
/// into the working scalar type.
///
/// # Panics
///
/// Panics if the value is not representable. All call sites pass small,
/// finite constants, for which the conversion always succeeds for `f32` and
/// `f64`.
pub(crate) fn fr<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite constant must be representable in the scalar type")
}

/// Converts a scalar into `f64` for reporting.
///
/// Non-finite values pass through as the corresponding `f64` infinity/NaN.
pub(crate) fn to64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
