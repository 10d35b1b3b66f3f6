use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the sketches, transforms and solvers are generic
/// over. `f64` is what the CLI and the test suite use; `f32` works for the
/// same code paths at reduced precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn from_i64_lossy(v: i64) -> Self {
        Self::from_i64(v).expect("i64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Default
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}
