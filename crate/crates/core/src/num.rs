//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display, LowerExp};

use num_traits as nt;

/// Floating-point scalar used by the kernel, feature, geometry and scoring code.
///
/// Implemented for `f32` and `f64`. Chip storage is always `f64`; the generic
/// paths exist so models and statistics can be computed in either precision.
pub trait Real:
    nt::Float
    + nt::FloatConst
    + nt::FromPrimitive
    + nt::ToPrimitive
    + nt::NumAssign
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the target cannot represent
    /// finite values at all (never for `f32`/`f64`).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: nt::Float
        + nt::FloatConst
        + nt::FromPrimitive
        + nt::ToPrimitive
        + nt::NumAssign
        + Debug
        + Display
        + LowerExp
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Formats a value with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_exact<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

/// Parses a value written by [`fmt_exact`] (or any decimal literal).
pub fn parse_exact<T: Real>(s: &str) -> Option<T> {
    let v: f64 = s.trim().parse().ok()?;
    T::from_f64(v)
}
