//! Scalar abstraction for the numeric core: f32 or f64.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the tensor/autodiff/eigen layers are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
