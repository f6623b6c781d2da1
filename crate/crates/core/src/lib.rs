//! Streaming bird-song classifier: semi-learnable spectral frontend,
//! causal convolutional encoder, recurrent attention head, and the
//! training, quantization, and dataset machinery around them.
//!
//! Everything is written against a [`num::Real`] scalar so the whole
//! model runs in `f32` for deployment and in `f64` where tests compare
//! analytic gradients against finite differences.

pub mod archive;
pub mod bytes;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod head;
pub mod model;
pub mod num;
pub mod quant;
pub mod streaming;
pub mod training;

pub use error::{Error, Result};
