//! Tensor-sketched neural network layers.
//!
//! A sketched layer replaces a dense weight tensor by `ell` pairs of random
//! mode-n sketches plus the seeds of the sign matrices that produced them. The
//! forward pass averages `2 * ell` unbiased reconstructions of the dense
//! layer's output; gradients are the closed forms of that average, so training
//! never materializes the dense weights.

pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod sketch;
pub mod suites;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use sketch::{SignMatrix, Sketch};
pub use tensor::Tensor;
