//! Two-party private inference for transformer encoders.

pub mod bfv;
pub mod engine;
pub mod error;
pub mod fixed;
pub mod math;
pub mod matmul;
pub mod mpc;
pub mod nn;

pub use error::{Error, ModelError, Result};
pub use fixed::{FieldElement, FixedPointParams, PlainTensor};
