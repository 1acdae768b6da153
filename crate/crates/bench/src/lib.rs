//! Seeded inputs shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use probekit::FeatureSet;

/// `n x d` matrix with entries uniform in [-1, 1).
pub fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Features with labels drawn from a noisy linear rule.
pub fn linear_features(n: usize, k: usize, seed: u64) -> FeatureSet {
    let phi = random_matrix(n, k, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let labels = (0..n)
        .map(|i| {
            let s: f64 = phi.row(i).iter().enumerate().map(|(j, v)| v / (j + 1) as f64).sum();
            u8::from(s + rng.random_range(-0.5..0.5) > 0.0)
        })
        .collect();
    FeatureSet::new(phi, labels).expect("consistent shapes")
}

/// Scenario texts carrying planted utilities, as the synthetic provider expects.
pub fn tagged_texts(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("Bench scenario {i} [u={:.6}]", (i as f64 * 0.37).sin()))
        .collect()
}
