//! Memory-aware Transformer parameterization workbench.
//!
//! The crate covers the whole pipeline for emulating sub-grid climate
//! tendencies with an encoder-only Transformer over short temporal windows:
//!
//! * [`tensor`]: dense tensors and tape-based reverse-mode differentiation
//! * [`nn`]: the windowed Transformer model and an MLP baseline
//! * [`data`]: dataset schema and I/O, subsampling, splits, normalization,
//!   windowing and a synthetic generator with controllable temporal memory
//! * [`optim`]: MSE loss, SGD/Adam/AdamW, plateau and cosine schedules, and
//!   the training loop
//! * [`metrics`]: MAE/RMSE/R², per-level profiles, zonal daily-mean R², spatial
//!   maps, scatter densities and SVG rendering
//! * [`search`]: resumable grid search over model/training hyperparameters
//! * [`checkpoint`]: the binary checkpoint container
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases below
//! fix the 64-bit reference precision used for training and evaluation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod search;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

/// Reference compute precision.
pub type Real = f64;

pub type Tensor = tensor::Tensor<Real>;
pub type Tape = tensor::Tape<Real>;
pub type Model = nn::Model<Real>;
pub type ParaformerParams = nn::ParaformerParams<Real>;
pub type MlpParams = nn::MlpParams<Real>;
pub type Optimizer = optim::Optimizer<Real>;

/// Storage-precision variants.
pub type ModelF32 = nn::Model<f32>;
pub type TensorF32 = tensor::Tensor<f32>;
