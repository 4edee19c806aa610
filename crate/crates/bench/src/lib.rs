//! Inputs shared by the benchmarks.

use mismatch_core::{Architecture, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn network(arch: Architecture) -> Network {
    arch.build(None, 1).expect("builtin architecture")
}

pub fn image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f32>()).collect()).expect("shape matches")
}

/// Two overlapping clouds of pairs of 10-class distributions.
pub fn detection_points(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = u8::from(rng.random_bool(0.5));
        let mut row = Vec::with_capacity(20);
        for _ in 0..2 {
            let peak = if label == 1 { rng.random_range(0.3..0.9) } else { rng.random_range(0.7..1.0) };
            let mut block = vec![(1.0f32 - peak) / 9.0; 10];
            block[rng.random_range(0..10)] = peak;
            row.extend(block);
        }
        rows.push(row);
        labels.push(label);
    }
    (rows, labels)
}
