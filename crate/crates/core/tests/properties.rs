mod oracles;

use std::path::Path;

use mismatch_core::attacks::{deepfool, degrade, fgsm, igsm, jsma, minimal_attack, BudgetSchedule};
use mismatch_core::detector::{decode_csv, encode_csv, extract_features, DetectionSample, FeatureVector, Provenance};
use mismatch_core::nn::{decode_checkpoint, encode_checkpoint, LayerSpec};
use mismatch_core::{AttackKind, DetectionDataset, Mode, Network, Outcome, TargetModel, Tensor};
use proptest::prelude::*;

fn small_cnn(seed: u64) -> Network {
    Network::new(
        vec![1, 8, 8],
        vec![
            LayerSpec::Normalize {
                mean: vec![0.3],
                std: vec![0.4],
            },
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: 3,
                kernel_h: 3,
                kernel_w: 3,
            },
            LayerSpec::MaxPool { window: 2 },
            LayerSpec::ReLU,
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: 27, out_dim: 10 },
            LayerSpec::ReLU,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Dense { in_dim: 10, out_dim: 4 },
        ],
        seed,
    )
    .unwrap()
}

fn image(pixels: Vec<f32>) -> Tensor {
    Tensor::new(vec![1, 8, 8], pixels).unwrap()
}

fn pixels() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..=1.0, 64)
}

fn quick_schedule() -> BudgetSchedule {
    BudgetSchedule {
        fgsm: (1..=20).map(|i| f64::from(i) * 0.05).collect(),
        igsm: (1..=10).map(|i| f64::from(i) * 0.1).collect(),
        ..BudgetSchedule::standard(8)
    }
}

/// Replays the attack at one grid level, as the search does.
fn attack_at(net: &Network, x: &Tensor, y: usize, kind: AttackKind, s: &BudgetSchedule, level: f64, seed: u64) -> Tensor {
    match kind {
        AttackKind::Fgsm => fgsm(net, x, y, level as f32).unwrap(),
        AttackKind::Igsm => igsm(net, x, y, (level / s.igsm_iters as f64) as f32, s.igsm_iters).unwrap(),
        AttackKind::Jsma => jsma(net, x, y, s.jsma_theta, (level * x.len() as f64).ceil() as usize).unwrap(),
        AttackKind::DeepFool => deepfool(net, x, y, s.deepfool_iters, s.deepfool_overshoot).unwrap(),
        _ => degrade(kind, x, level, seed).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_is_normalized(seed in any::<u64>(), px in pixels()) {
        let net = small_cnn(seed);
        let f = net.forward(&image(px), Mode::Train, seed).unwrap();
        let sum: f64 = f.probs.iter().map(|&p| f64::from(p)).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);
        prop_assert!(f.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn eval_forward_ignores_seed(seed in any::<u64>(), other in any::<u64>(), px in pixels()) {
        let net = small_cnn(3);
        let x = image(px);
        prop_assert_eq!(
            net.forward(&x, Mode::Eval, seed).unwrap().logits,
            net.forward(&x, Mode::Eval, other).unwrap().logits
        );
    }

    #[test]
    fn minimal_attacks_are_sound_minimal_and_deterministic(
        net_seed in 0u64..4,
        attack_seed in any::<u64>(),
        px in pixels(),
        kind in prop::sample::select(AttackKind::ALL.to_vec()),
    ) {
        let net = small_cnn(net_seed);
        let x = image(px);
        let y = net.predict(&x).unwrap();
        let s = quick_schedule();
        let r = minimal_attack(&net, &x, y, kind, &s, attack_seed).unwrap();
        prop_assert_eq!(&r, &minimal_attack(&net, &x, y, kind, &s, attack_seed).unwrap());
        prop_assert!(r.x_adv.is_unit_range());
        prop_assert_eq!(r.is_flipped(), net.predict(&r.x_adv).unwrap() != y);
        match r.outcome {
            Outcome::FlippedLabel => {
                let used = r.level_used.unwrap();
                let replay = attack_at(&net, &x, y, kind, &s, used, attack_seed);
                prop_assert_eq!(&replay, &r.x_adv);
                for level in s.levels(kind).into_iter().filter(|&l| l < used) {
                    let adv = attack_at(&net, &x, y, kind, &s, level, attack_seed);
                    prop_assert_eq!(net.predict(&adv).unwrap(), y, "level {} flipped", level);
                }
            }
            Outcome::BudgetExhausted => {
                prop_assert_eq!(&r.x_adv, &x);
                for level in s.levels(kind) {
                    let adv = attack_at(&net, &x, y, kind, &s, level, attack_seed);
                    prop_assert_eq!(net.predict(&adv).unwrap(), y);
                }
            }
            Outcome::AlreadyMisclassified => prop_assert!(false, "y is the prediction"),
        }
    }

    #[test]
    fn misclassified_inputs_are_untouched(px in pixels(), kind in prop::sample::select(AttackKind::ALL.to_vec())) {
        let net = small_cnn(1);
        let x = image(px);
        let wrong = (net.predict(&x).unwrap() + 1) % 4;
        let r = minimal_attack(&net, &x, wrong, kind, &quick_schedule(), 0).unwrap();
        prop_assert_eq!(r.outcome, Outcome::AlreadyMisclassified);
        prop_assert_eq!(&r.x_adv, &x);
        prop_assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact(seed in any::<u64>(), px in pixels()) {
        let net = small_cnn(seed);
        let back = decode_checkpoint(&encode_checkpoint(&net), Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &net);
        let x = image(px);
        prop_assert_eq!(net.probabilities(&x).unwrap(), back.probabilities(&x).unwrap());
    }

    #[test]
    fn detection_csv_roundtrip_is_exact(
        rows in prop::collection::vec(
            (any::<usize>(), any::<bool>(), prop::option::of(0usize..7), prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 6)),
            0..20,
        )
    ) {
        let samples = rows
            .into_iter()
            .map(|(source_index, attacked, kind, features)| {
                let kind = if attacked { Some(kind.unwrap_or(0)) } else { kind };
                DetectionSample {
                    source_index,
                    label: u8::from(attacked),
                    kind: kind.map(|k| AttackKind::ALL[k]),
                    target_model: kind.map(|k| if k % 2 == 0 { TargetModel::One } else { TargetModel::Two }),
                    features: FeatureVector(features),
                }
            })
            .collect();
        let prov = Provenance { name: "p".into(), kind: AttackKind::Igsm, seed: 1 };
        let d = DetectionDataset { provenance: prov.clone(), samples };
        let back = decode_csv(&encode_csv(&d), Path::new("mem"), prov).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn features_are_valid_distributions(px in pixels(), a in 0u64..50, b in 0u64..50) {
        let f = extract_features(&small_cnn(a), &small_cnn(b), &image(px)).unwrap();
        prop_assert_eq!(f.len(), 8);
        prop_assert!(f.is_valid(1e-6));
    }
}

#[test]
fn deepfool_one_step_lands_on_random_linear_boundaries() {
    let worst = oracles::linear::deepfool_worst_residual(100, 17);
    assert!(worst <= 1e-4, "residual {worst}");
}

#[test]
fn checkpoints_and_csv_roundtrip_on_random_inputs() {
    assert_eq!(oracles::roundtrip::checkpoint_mismatches(100, 3), 0);
    assert_eq!(oracles::roundtrip::csv_mismatches(100, 4), 0);
}
