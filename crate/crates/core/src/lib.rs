//! Non-contrastive self-supervised pretraining for tabular network traffic,
//! with a single-center distance detector on top.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training
//! defaults to `f32`; gradient checks run in `f64`.

pub mod augment;
pub mod baselines;
pub mod data;
pub mod detector;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod ssl;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
