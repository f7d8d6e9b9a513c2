//! Shared fixtures for the criterion benches.

use ptinfer_core::mpc::session::SessionConfig;
use ptinfer_core::{FixedPointParams, PlainTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform ring elements in a `rows x cols` matrix.
pub fn random_ring_matrix(rows: usize, cols: usize, seed: u64) -> PlainTensor {
    let fp = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PlainTensor::from_fn(vec![rows, cols], |_| rng.gen::<u64>() & fp.mask())
}

/// Encoded reals uniform in `(-range, range)`.
pub fn random_real_matrix(rows: usize, cols: usize, range: f64, seed: u64) -> PlainTensor {
    let fp = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-range..range)).collect();
    PlainTensor::encode(vec![rows, cols], &v, &fp).expect("in range")
}

pub fn session(poly_degree: usize) -> SessionConfig {
    SessionConfig {
        poly_degree,
        seed: 1,
        ..Default::default()
    }
}
