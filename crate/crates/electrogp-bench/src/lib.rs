//! Shared fixtures for the benchmark targets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Latent locations spread over (0,1) with a little jitter, mirroring the
/// configurations the optimizer walks through.
pub fn spread_latents(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base = (i as f64 + 0.5) / n as f64;
            base + 0.2 / n as f64 * (2.0 * rng.gen::<f64>() - 1.0)
        })
        .collect()
}

/// Noisy observations of a smooth curve through d dimensions.
pub fn curve_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = spread_latents(n, seed ^ 0x9e37);
    DMatrix::from_fn(n, d, |i, j| {
        let phase = j as f64 + 1.0;
        (phase * std::f64::consts::PI * xs[i]).sin() + 0.05 * (rng.gen::<f64>() - 0.5)
    })
}
