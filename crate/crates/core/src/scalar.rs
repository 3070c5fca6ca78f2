use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type for every numeric routine in the crate.
///
/// Implemented for `f32` and `f64`. Reconstruction sums many large counts with
/// alternating signs, so `f64` is the type used by the mechanisms and the CLI.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable as float")
    }

    #[inline]
    fn of_f64(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable as float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
}
