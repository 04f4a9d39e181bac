//! Fixtures shared by the benchmarks.

use mobfair::{generate_world, GeneratedWorld, Matrix, SynthConfig, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` 2D points around the corners of the unit square, split by `sizes`.
pub fn blobs(n: usize, sizes: &[f64], seed: u64) -> Matrix {
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut acc = 0.0;
        let frac = i as f64 / n as f64;
        let blob = sizes.iter().position(|s| {
            acc += s;
            frac < acc
        });
        let c = corners[blob.unwrap_or(sizes.len() - 1) % corners.len()];
        data.push(c[0] + rng.random_range(-0.2..0.2));
        data.push(c[1] + rng.random_range(-0.2..0.2));
    }
    Matrix::from_vec(n, 2, data)
}

pub fn world(n_users: usize, seed: u64) -> GeneratedWorld {
    let config = SynthConfig { n_users, n_pois: 1000, n_regions: 10, ..SynthConfig::default() };
    generate_world(&config, seed).expect("valid bench config")
}

/// Candidate pool labelled with the answer key.
pub fn candidates(generated: &GeneratedWorld) -> Vec<(UserId, usize)> {
    generated.answer_key.iter().collect()
}
