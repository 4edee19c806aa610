//! Decision-mismatch adversarial example detection.
//!
//! Two structurally different classifiers see the same input; their
//! concatenated softmax outputs feed a binary RBF-SVM that separates clean
//! images from minimal-budget attacks.
//!
//! * [`nn`]: feedforward networks, SGD training, input gradients and Jacobians
//! * [`data`]: MNIST IDX and CIFAR-10 binary loaders
//! * [`attacks`]: FGSM, IGSM, JSMA, DeepFool and quality degradations, plus the
//!   per-image minimal-budget search
//! * [`detector`]: features, detection datasets, SMO-trained SVM, metrics,
//!   cross-validation and the generalization matrix

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod detector;
pub mod error;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use attacks::{AttackKind, AttackResult, BudgetSchedule, Outcome, TargetModel};
pub use data::{Dataset, LabeledImage};
pub use detector::{DetectionDataset, DetectionSample, FeatureVector, MetricsReport, SvmModel, SvmParams};
pub use error::{Error, Result};
pub use nn::{Architecture, Mode, Network, OutputSpace, TrainConfig};
pub use tensor::Tensor;
