//! Decision-mismatch detection: concatenated softmax features of two frozen
//! classifiers, attack/clean datasets, an RBF SVM and its evaluation.

mod table;
mod eval;
mod metrics;
mod svm;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use table::{decode_csv, encode_csv, read_csv, write_csv, CSV_DIGITS};
pub use eval::{generalization_matrix, kfold_cv, stratified_folds, svm_train, CvReport, GeneralizationMatrix};
pub use metrics::{evaluate_metrics, roc_auc, MetricsReport};
pub use svm::{solve_smo, svm_fit, Gamma, SmoSolution, SvmModel, SvmParams};

use crate::attacks::{minimal_attack, AttackKind, AttackResult, BudgetSchedule, TargetModel};
use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::seed;
use crate::tensor::Tensor;

/// Softmax of model 1 followed by softmax of model 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Both halves are distributions: entries in [0, 1], sums within `tol`
    /// of one.
    pub fn is_valid(&self, tol: f64) -> bool {
        if self.0.len() % 2 != 0 || self.0.is_empty() {
            return false;
        }
        self.0.chunks(self.0.len() / 2).all(|block| {
            let sum: f64 = block.iter().map(|&v| f64::from(v)).sum();
            block.iter().all(|v| (0.0..=1.0).contains(v)) && (sum - 1.0).abs() <= tol
        })
    }
}

fn check_pair(m1: &Network, m2: &Network) -> Result<()> {
    if m1.input_shape() != m2.input_shape() {
        return Err(Error::ModelPair(format!(
            "input shapes differ: {:?} vs {:?}",
            m1.input_shape(),
            m2.input_shape()
        )));
    }
    if m1.num_classes() != m2.num_classes() {
        return Err(Error::ModelPair(format!(
            "class counts differ: {} vs {}",
            m1.num_classes(),
            m2.num_classes()
        )));
    }
    Ok(())
}

pub fn extract_features(m1: &Network, m2: &Network, x: &Tensor) -> Result<FeatureVector> {
    check_pair(m1, m2)?;
    let mut v = m1.probabilities(x)?;
    v.extend(m2.probabilities(x)?);
    Ok(FeatureVector(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSample {
    pub source_index: usize,
    /// 1 for a successful attack, 0 otherwise.
    pub label: u8,
    /// Set whenever an attack was attempted, successful or not.
    pub kind: Option<AttackKind>,
    pub target_model: Option<TargetModel>,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub kind: AttackKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDataset {
    pub provenance: Provenance,
    pub samples: Vec<DetectionSample>,
}

impl DetectionDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn attack_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.label == 1).count() as f64 / self.samples.len() as f64
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            provenance: self.provenance.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Per-image outcome of the dataset protocol, with the attack record when
/// one was attempted.
pub(crate) fn protocol_sample(
    m1: &Network,
    m2: &Network,
    index: usize,
    img: &LabeledImage,
    kind: AttackKind,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<(DetectionSample, Option<AttackResult>)> {
    let mut rng = seed::rng(seed);
    let attack = rng.random_bool(0.5);
    let target = if rng.random_bool(0.5) {
        TargetModel::One
    } else {
        TargetModel::Two
    };
    let attack_seed: u64 = rng.random();
    if !attack {
        let sample = DetectionSample {
            source_index: index,
            label: 0,
            kind: None,
            target_model: None,
            features: extract_features(m1, m2, &img.pixels)?,
        };
        return Ok((sample, None));
    }
    let net = match target {
        TargetModel::One => m1,
        TargetModel::Two => m2,
    };
    let mut result = minimal_attack(net, &img.pixels, img.label, kind, schedule, attack_seed)?;
    result.target_model = Some(target);
    let flipped = result.is_flipped();
    let source = if flipped { &result.x_adv } else { &img.pixels };
    let sample = DetectionSample {
        source_index: index,
        label: u8::from(flipped),
        kind: Some(kind),
        target_model: Some(target),
        features: extract_features(m1, m2, source)?,
    };
    Ok((sample, Some(result)))
}

/// Builds one detection dataset over `pool`.
///
/// Each image gets its own generator seeded from `mix(seed, index)`: a fair
/// coin chooses clean or attacked, a second coin the target model. A
/// successful minimal attack yields label 1 with features of the adversarial
/// image; a clean draw, an already misclassified image or an exhausted
/// budget yields label 0 with features of the clean image.
pub fn build_detection_dataset(
    m1: &Network,
    m2: &Network,
    pool: &Dataset,
    kind: AttackKind,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<DetectionDataset> {
    check_pair(m1, m2)?;
    schedule.validate()?;
    if pool.is_empty() {
        return Err(Error::Data("detection pool is empty".into()));
    }
    let samples = pool
        .images()
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            protocol_sample(m1, m2, i, img, kind, schedule, seed::mix(seed, i as u64))
                .map(|(s, _)| s)
                .map_err(|e| Error::Image {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionDataset {
        provenance: Provenance {
            name: format!("{}-{}", pool.name(), kind),
            kind,
            seed,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn uniform(k: usize, n: usize) -> Network {
        Network::from_parts(
            vec![n],
            vec![(LayerSpec::Dense { in_dim: n, out_dim: k }, vec![0.0; k * n], vec![0.0; k])],
        )
        .unwrap()
    }

    fn linear_pair() -> (Network, Network) {
        let a = Network::from_parts(
            vec![2],
            vec![(
                LayerSpec::Dense { in_dim: 2, out_dim: 2 },
                vec![1.0, -1.0, -1.0, 1.0],
                vec![0.0, 0.0],
            )],
        )
        .unwrap();
        let b = Network::from_parts(
            vec![2],
            vec![(
                LayerSpec::Dense { in_dim: 2, out_dim: 2 },
                vec![2.0, 0.0, 0.0, 2.0],
                vec![0.0, 0.0],
            )],
        )
        .unwrap();
        (a, b)
    }

    fn pool(n: usize) -> Dataset {
        let images = (0..n)
            .map(|i| {
                let t = (i as f32 * 0.618).fract() * 0.8 + 0.1;
                let label = usize::from(t >= 0.5);
                LabeledImage {
                    pixels: Tensor::new(vec![2], vec![1.0 - t, t]).unwrap(),
                    label,
                }
            })
            .collect();
        Dataset::new("pool", 2, images).unwrap()
    }

    #[test]
    fn features_are_concatenated_distributions() {
        let (a, b) = linear_pair();
        let x = Tensor::new(vec![2], vec![0.3, 0.6]).unwrap();
        let f = extract_features(&a, &b, &x).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.is_valid(1e-6));
        let same = extract_features(&a, &a, &x).unwrap();
        assert_eq!(same.values()[..2], same.values()[2..]);
        let u = extract_features(&uniform(10, 2), &uniform(10, 2), &x).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.1));
        assert!(matches!(
            extract_features(&a, &uniform(3, 2), &x),
            Err(Error::ModelPair(_))
        ));
    }

    #[test]
    fn failed_attacks_are_labelled_clean() {
        // Uniform outputs: argmax is always class 0, so label-0 images cannot
        // be flipped and label-1 images are already misclassified.
        let m = uniform(2, 2);
        let d = build_detection_dataset(&m, &m, &pool(40), AttackKind::Fgsm, &BudgetSchedule::standard(2), 3)
            .unwrap();
        assert_eq!(d.len(), 40);
        assert!(d.samples.iter().all(|s| s.label == 0));
        assert!(d.samples.iter().any(|s| s.kind.is_some()));
    }

    #[test]
    fn protocol_is_deterministic_and_sound() {
        let (a, b) = linear_pair();
        let p = pool(200);
        let s = BudgetSchedule::standard(2);
        let d1 = build_detection_dataset(&a, &b, &p, AttackKind::Fgsm, &s, 11).unwrap();
        let d2 = build_detection_dataset(&a, &b, &p, AttackKind::Fgsm, &s, 11).unwrap();
        assert_eq!(d1, d2);
        let d3 = build_detection_dataset(&a, &b, &p, AttackKind::Fgsm, &s, 12).unwrap();
        assert_ne!(d1, d3);
        let frac = d1.attack_fraction();
        assert!((0.35..=0.6).contains(&frac), "{frac}");
        for (i, img) in p.images().iter().enumerate() {
            let (sample, result) =
                protocol_sample(&a, &b, i, img, AttackKind::Fgsm, &s, seed::mix(11, i as u64)).unwrap();
            assert_eq!(sample, d1.samples[i]);
            assert!(sample.features.is_valid(1e-6));
            if sample.label == 1 {
                let r = result.unwrap();
                let net = if r.target_model == Some(TargetModel::One) { &a } else { &b };
                assert_ne!(net.predict(&r.x_adv).unwrap(), img.label);
                assert_eq!(sample.features, extract_features(&a, &b, &r.x_adv).unwrap());
            }
        }
    }
}
