use std::path::Path;

use mismatch_core::detector::{decode_csv, encode_csv, DetectionSample, FeatureVector, Provenance};
use mismatch_core::nn::{decode_checkpoint, encode_checkpoint};
use mismatch_core::{Architecture, AttackKind, DetectionDataset, TargetModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::derivatives::random_net;

/// Number of random networks, including every built-in architecture, that
/// fail to decode to an identical network.
pub fn checkpoint_mismatches(nets: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<_> = Architecture::ALL
        .iter()
        .map(|a| a.build(Some((vec![0.5; 3], vec![0.25; 3])), rng.random()))
        .filter_map(Result::ok)
        .collect();
    candidates.extend((0..nets).map(|_| random_net(&mut rng)));
    candidates
        .iter()
        .filter(|net| decode_checkpoint(&encode_checkpoint(net), Path::new("mem")).ok().as_ref() != Some(*net))
        .count()
}

/// Number of random detection datasets whose CSV text does not decode to
/// identical values. Features span the full finite f32 range.
pub fn csv_mismatches(datasets: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for d in 0..datasets {
        let kind = AttackKind::ALL[d % AttackKind::ALL.len()];
        let dim = 2 * rng.random_range(1..12);
        let samples = (0..rng.random_range(0..60))
            .map(|i| {
                let attacked = rng.random_bool(0.5);
                let label = u8::from(attacked && rng.random_bool(0.7));
                let features = (0..dim)
                    .map(|_| loop {
                        let v = f32::from_bits(rng.random());
                        if v.is_finite() {
                            break v;
                        }
                    })
                    .collect();
                DetectionSample {
                    source_index: i * 3,
                    label,
                    kind: attacked.then_some(kind),
                    target_model: attacked.then(|| if rng.random_bool(0.5) { TargetModel::One } else { TargetModel::Two }),
                    features: FeatureVector(features),
                }
            })
            .collect();
        let provenance = Provenance {
            name: format!("random-{d}"),
            kind,
            seed: d as u64,
        };
        let original = DetectionDataset {
            provenance: provenance.clone(),
            samples,
        };
        let back = decode_csv(&encode_csv(&original), Path::new("mem"), provenance);
        if back.ok().as_ref() != Some(&original) {
            bad += 1;
        }
    }
    bad
}
