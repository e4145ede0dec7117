//! Scalar abstraction shared by the market algebra, the predictor and the engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real number type the simulator is generic over (`f64` and `f32` are provided).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {}
impl Scalar for f32 {}

/// Upper end of the rating scale for one attribute.
pub const MAX_RATING: f64 = 5.0;
