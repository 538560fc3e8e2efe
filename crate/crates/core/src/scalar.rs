//! Scalar abstraction for metric and aggregation arithmetic.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the metric and aggregation code is written against.
///
/// Implemented for `f32` and `f64`. Server-side evaluation uses `f64`
/// (see [`crate::Score`]).
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts a count or index; exact for every count this crate produces.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as float")
    }

    fn half() -> Self {
        Self::from_f64(0.5).expect("0.5 representable")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}
