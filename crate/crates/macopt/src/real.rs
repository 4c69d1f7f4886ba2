use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Scalar type used by every numeric routine in this crate.
///
/// Blanket-implemented for `f32` and `f64`. The default tolerances are chosen
/// for `f64`; with `f32` callers should pass tolerances no tighter than ~1e-5.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Lifts an `f64` constant into the scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }

    /// Lossy conversion back to `f64` (used for reporting and errors).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}
