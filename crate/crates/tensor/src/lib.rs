//! Minimal dense tensor library for training small convolutional keypoint
//! regressors on the CPU.
//!
//! There is no general autodiff graph. Every operation in [`ops`] comes with
//! an explicit backward function, and the layers in [`nn`] cache whatever
//! their backward pass needs. Layouts are row-major `NCHW`.
//!
//! Everything is generic over [`Scalar`] so the same kernels run in `f32`
//! for training and in `f64` for finite-difference gradient checks.

pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Forward-pass mode shared by every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
