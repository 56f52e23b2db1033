//! Dense linear algebra, the seeded generator, and the finite-difference
//! gradient oracle.
//!
//! Training and storage run in `f32`; every routine is generic over [`Real`]
//! so gradient checks can be run in `f64`.

mod dense;
mod gradcheck;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use dense::{dot, l2_norm, rowwise_mean_std, Dense2D};
pub use gradcheck::{finite_diff_grad, finite_diff_grad_flat, relative_error};
pub use rng::Rng;

/// Floating-point element type used throughout the crate (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal to this type.
    fn lit(x: f64) -> Self;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
}
