//! Shared fixtures for the criterion benchmarks: a deterministic model
//! and test signals at the deployment configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wren_core::model::{ModelConfig, ModelParams};

/// Deployment-size model with seeded random weights.
pub fn full_model() -> ModelParams<f32> {
    ModelParams::init(&ModelConfig::full_default(), 42).expect("valid default config")
}

/// Uniform noise in [-0.5, 0.5); a busy signal that exercises every
/// band of the filterbank.
pub fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
}
