//! White-box untargeted attacks and the per-image minimal-budget search.
//!
//! Every attack runs the target network in eval mode and returns images
//! clipped to `[0, 1]`.

mod deepfool;
mod degrade;
mod gradient;
mod jsma;
mod search;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use deepfool::deepfool;
pub use degrade::degrade;
pub use gradient::{fgsm, igsm};
pub use jsma::jsma;
pub use search::{
    evaluate_attack, minimal_attack, AttackResult, AttackSummary, BudgetSchedule, Outcome,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Igsm,
    Jsma,
    DeepFool,
    GaussianBlur,
    GaussianNoise,
    SaltPepper,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::Fgsm,
        AttackKind::Igsm,
        AttackKind::Jsma,
        AttackKind::DeepFool,
        AttackKind::GaussianBlur,
        AttackKind::GaussianNoise,
        AttackKind::SaltPepper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Igsm => "igsm",
            AttackKind::Jsma => "jsma",
            AttackKind::DeepFool => "deepfool",
            AttackKind::GaussianBlur => "gaussian_blur",
            AttackKind::GaussianNoise => "gaussian_noise",
            AttackKind::SaltPepper => "salt_pepper",
        }
    }

    /// Attacks that follow the model's gradient, as opposed to quality
    /// degradations that only query predictions.
    pub fn is_gradient_based(self) -> bool {
        matches!(
            self,
            AttackKind::Fgsm | AttackKind::Igsm | AttackKind::Jsma | AttackKind::DeepFool
        )
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown attack kind '{s}'")))
    }
}

/// Which of the two classifiers an attack was generated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetModel {
    One,
    Two,
}

impl TargetModel {
    pub fn number(self) -> u8 {
        match self {
            TargetModel::One => 1,
            TargetModel::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(TargetModel::One),
            2 => Ok(TargetModel::Two),
            _ => Err(Error::Parameter(format!("target model must be 1 or 2, got {n}"))),
        }
    }
}

/// Mean squared pixel difference.
pub fn attack_mse(x: &Tensor, x_adv: &Tensor) -> Result<f64> {
    if x.shape() != x_adv.shape() {
        return Err(Error::InputShape {
            expected: x.shape().to_vec(),
            actual: x_adv.shape().to_vec(),
        });
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_adv.data())
        .map(|(a, b)| {
            let d = f64::from(a - b);
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
