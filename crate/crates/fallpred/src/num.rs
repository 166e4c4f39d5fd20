//! Scalar abstraction: every numeric kernel in this crate is generic over
//! [`Real`], implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar used throughout the simulator, dataset machinery,
/// and network kernels.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless for `f64`; rounds to nearest for `f32`.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Widening conversion; exact for both supported scalars.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real widens to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting literal constants into the active scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}
