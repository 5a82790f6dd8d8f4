//! Adaptive-kernel image downscaling.
//!
//! Predicts a per-pixel, per-channel resampling kernel for every output
//! pixel of a downscaled image, normalizes the kernels to be convex
//! weights, and applies them to the source image. Training supervises the
//! downscaled output against reference low-resolution images with a mean
//! absolute error objective.
//!
//! Module map:
//! - [`tensor`]: dense row-major tensors over `f32`/`f64`
//! - [`ops`]: raw convolution / padding / rearrangement kernels
//! - [`graph`]: reverse-mode automatic differentiation tape
//! - [`resample`]: grid projection, kernel-field application, classic filters
//! - [`model`]: kernel-prediction network and its variants
//! - [`optim`]: Adam optimizer and plateau learning-rate schedule
//! - [`metrics`]: PSNR / SSIM fidelity measures
//! - [`data`]: paired datasets, PNG I/O, augmentation, synthesis
//! - [`checkpoint`]: binary serialization of model and trainer state
//! - [`train`]: supervised training loop

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod resample;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
