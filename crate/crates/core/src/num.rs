//! Scalar abstraction for the numeric code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the engine is generic over.
///
/// Implemented for `f32` and `f64` via the blanket impl; the crate-root
/// aliases fix `f64` for the artifact formats.
pub trait Real:
    Float + FromPrimitive + Sum + Display + Debug + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for values outside the
    /// target type's range (never the case for the constants used here).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal out of range for scalar type")
    }

    /// Converts a `usize` count losslessly enough for averaging.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count out of range for scalar type")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + Sum
        + Display
        + Debug
        + Serialize
        + DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(m: T) -> T {
    if m >= T::zero() {
        T::one() / (T::one() + (-m).exp())
    } else {
        let e = m.exp();
        e / (T::one() + e)
    }
}

/// Log-odds of `p`; caller is responsible for keeping `p` inside (0, 1).
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed from a root seed and a tag path, so each
/// unit of work (a tree, a grid draw, a country) owns its own stream and the
/// results cannot depend on scheduling order.
pub fn substream(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ t))
}
