//! One-pass linear sketches of a turnstile-updated matrix `A` that support,
//! without ever materializing `A`: sampling noisy columns of the entrywise
//! transformed matrix `f(A)` (where `f(x) = log(1 + |x|)`) approximately
//! proportional to their squared norms, extracting a rank-k orthonormal
//! factor for the column space of `f(A)`, and approximately solving
//! `min_x ||f(A) x - b||_2`.

pub mod error;
pub mod hashing;
pub mod hh_sketch;
pub mod linalg;
pub mod lowrank;
pub mod matrix;
pub mod oracle;
pub mod regression;
pub mod sampler;
pub mod scalar;
pub mod stream_io;
pub mod transform;

pub use error::{Error, Result};
pub use lowrank::{BuildOptions, BuildOutput, FactorL, Passes, SampleBatch};
pub use matrix::DenseMatrix;
pub use regression::{RegressionOptions, RegressionOutput, RegressionSolution};
pub use sampler::{ColumnSample, MassProvider, RunSettings, SamplerConfig, SamplerState, SketchBudget};
pub use scalar::Scalar;
pub use stream_io::{StreamHeader, StreamUpdate};
pub use transform::{ConcatVector, TransformMode, TransformSpec};

/// Concrete double-precision aliases; the CLI and tests use these.
pub type Transform64 = TransformSpec<f64>;
pub type Matrix64 = DenseMatrix<f64>;
pub type BasicHh64 = hh_sketch::BasicHh<f64>;
pub type CompleteHh64 = hh_sketch::CompleteHh<f64>;
pub type Sampler64 = SamplerState<f64>;
pub type Factor64 = FactorL<f64>;

/// Single-precision variants of the same structures.
pub type Transform32 = TransformSpec<f32>;
pub type Matrix32 = DenseMatrix<f32>;
pub type Sampler32 = SamplerState<f32>;
pub type Factor32 = FactorL<f32>;
