use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Sum + Debug + Default + Send + Sync + 'static
{
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}
