//! Multi-modal VAE normative modelling: expert fusion, a small autodiff engine,
//! model training, deviation metrics and synthetic benchmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod deviation;
pub mod error;
pub mod fusion;
pub mod gradnet;
pub mod mvae;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF32 = gradnet::Tensor<f32>;
pub type TensorF64 = gradnet::Tensor<f64>;
pub type DiagGaussianF32 = fusion::DiagGaussian<f32>;
pub type DiagGaussianF64 = fusion::DiagGaussian<f64>;
pub type MvaeModelF32 = mvae::MvaeModel<f32>;
pub type MvaeModelF64 = mvae::MvaeModel<f64>;
pub type ModelCheckpointF32 = mvae::ModelCheckpoint<f32>;
pub type ModelCheckpointF64 = mvae::ModelCheckpoint<f64>;
