use mismatch_core::attacks::deepfool;
use mismatch_core::nn::LayerSpec;
use mismatch_core::{Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest `|w·x' + b|` after one DeepFool step without overshoot on
/// `models` random binary linear classifiers. Draws whose step leaves the
/// open unit box are skipped, since clipping moves the point off the plane.
pub fn deepfool_worst_residual(models: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < models {
        let n = rng.random_range(2..50);
        let w: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let x: Vec<f32> = (0..n).map(|_| rng.random_range(0.3..0.7f32)).collect();
        // f = l1 - l0 = w·x + b, placed slightly on the class-0 side.
        let wx: f32 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let b = -wx - rng.random_range(0.01..0.2f32);
        let mut weights = vec![0.0; n];
        weights.extend(&w);
        let net = Network::from_parts(
            vec![n],
            vec![(LayerSpec::Dense { in_dim: n, out_dim: 2 }, weights, vec![0.0, b])],
        )
        .unwrap();
        let xt = Tensor::new(vec![n], x).unwrap();
        let adv = deepfool(&net, &xt, 0, 1, 0.0).unwrap();
        if !adv.data().iter().all(|v| *v > 0.0 && *v < 1.0) {
            continue;
        }
        let f: f64 = w.iter().zip(adv.data()).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>() + f64::from(b);
        worst = worst.max(f.abs());
        checked += 1;
    }
    worst
}
