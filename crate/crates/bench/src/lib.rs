//! Shared fixtures for the criterion benchmarks.

use limbnet_core::data::LimbGrouping;
use limbnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform(-1, 1) tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Five limbs of six channels.
pub fn five_limbs() -> LimbGrouping {
    LimbGrouping::new((0..5).map(|l| (format!("limb{l}"), (l * 6..l * 6 + 6).collect())).collect(), 30)
        .expect("valid grouping")
}
