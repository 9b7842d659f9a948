//! segkit: a desk-scale semantic-segmentation engine.
//!
//! Everything runs on a small reverse-mode autodiff tape over dense f64
//! tensors: the layer vocabulary (convolutions, pooling, normalization,
//! upsampling), five encoder-decoder architectures over six swappable
//! backbone families, segmentation losses and metrics, an RGB-palette
//! data pipeline, and an Adam training loop with a model x backbone
//! benchmark harness. Correctness rests on finite-difference gradient
//! checks and analytic oracles rather than large-scale training.

pub mod arch;
pub mod backbone;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
