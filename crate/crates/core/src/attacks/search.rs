use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{attack_mse, deepfool, degrade, gradient, igsm, jsma, AttackKind, TargetModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::seed;
use crate::tensor::Tensor;

/// Ascending budget grids, one per attack kind.
///
/// JSMA levels are fractions of input features; the pixel cap at level `f`
/// is `ceil(f·n)`. DeepFool is searched as a single level equal to its
/// iteration cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub fgsm: Vec<f64>,
    pub igsm: Vec<f64>,
    pub igsm_iters: usize,
    pub jsma: Vec<f64>,
    pub jsma_theta: f32,
    pub deepfool_iters: usize,
    pub deepfool_overshoot: f32,
    pub blur: Vec<f64>,
    pub noise: Vec<f64>,
    pub salt_pepper: Vec<f64>,
}

fn linear_grid(steps: usize, max: f64) -> Vec<f64> {
    (1..=steps).map(|i| max * i as f64 / steps as f64).collect()
}

impl BudgetSchedule {
    /// Default grids for images of the given spatial width.
    pub fn standard(width: usize) -> Self {
        Self {
            fgsm: linear_grid(100, 1.0),
            igsm: linear_grid(100, 1.0),
            igsm_iters: 10,
            jsma: linear_grid(10, 0.1),
            jsma_theta: 1.0,
            deepfool_iters: 50,
            deepfool_overshoot: 0.02,
            blur: linear_grid(50, width as f64 / 4.0),
            noise: linear_grid(50, 1.0),
            salt_pepper: linear_grid(50, 1.0),
        }
    }

    pub fn levels(&self, kind: AttackKind) -> Vec<f64> {
        match kind {
            AttackKind::Fgsm => self.fgsm.clone(),
            AttackKind::Igsm => self.igsm.clone(),
            AttackKind::Jsma => self.jsma.clone(),
            AttackKind::DeepFool => vec![self.deepfool_iters as f64],
            AttackKind::GaussianBlur => self.blur.clone(),
            AttackKind::GaussianNoise => self.noise.clone(),
            AttackKind::SaltPepper => self.salt_pepper.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in AttackKind::ALL {
            let levels = self.levels(kind);
            let increasing = levels.windows(2).all(|w| w[0] < w[1]);
            let positive = levels.iter().all(|v| *v > 0.0 && v.is_finite());
            if levels.is_empty() || !increasing || !positive {
                return Err(Error::Parameter(format!(
                    "{kind} grid must be nonempty, positive and strictly increasing"
                )));
            }
        }
        let fractions = [&self.jsma, &self.salt_pepper];
        if fractions.iter().any(|g| g.last().is_some_and(|v| *v > 1.0)) {
            return Err(Error::Parameter("fraction grids must not exceed 1".into()));
        }
        if self.igsm_iters == 0 || !(self.jsma_theta > 0.0) || !(self.deepfool_overshoot >= 0.0) {
            return Err(Error::Parameter("invalid attack schedule parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    FlippedLabel,
    AlreadyMisclassified,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// The adversarial image on success, otherwise the clean input.
    pub x_adv: Tensor,
    pub outcome: Outcome,
    pub kind: AttackKind,
    pub level_used: Option<f64>,
    pub mse: f64,
    pub adversarial_label: Option<usize>,
    pub target_model: Option<TargetModel>,
}

impl AttackResult {
    fn unchanged(x: &Tensor, kind: AttackKind, outcome: Outcome) -> Self {
        Self {
            x_adv: x.clone(),
            outcome,
            kind,
            level_used: None,
            mse: 0.0,
            adversarial_label: None,
            target_model: None,
        }
    }

    pub fn is_flipped(&self) -> bool {
        self.outcome == Outcome::FlippedLabel
    }
}

/// Searches the schedule for the first level at which `kind` changes the
/// prediction of `net` away from `y`. `seed` drives the random
/// degradations and is reused at every level.
pub fn minimal_attack(
    net: &Network,
    x: &Tensor,
    y: usize,
    kind: AttackKind,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<AttackResult> {
    schedule.validate()?;
    if x.shape() != net.input_shape() {
        return Err(Error::InputShape {
            expected: net.input_shape().to_vec(),
            actual: x.shape().to_vec(),
        });
    }
    if y >= net.num_classes() {
        return Err(Error::Label {
            label: y,
            classes: net.num_classes(),
        });
    }
    if net.predict(x)? != y {
        return Ok(AttackResult::unchanged(x, kind, Outcome::AlreadyMisclassified));
    }
    let found = match kind {
        AttackKind::Fgsm => {
            let grad = net.input_gradient(x, y)?;
            first_flip(net, y, &schedule.fgsm, |eps| Ok(gradient::step(x, &grad, eps as f32)))?
        }
        AttackKind::Igsm => {
            let iters = schedule.igsm_iters;
            first_flip(net, y, &schedule.igsm, |eps| {
                igsm(net, x, y, (eps / iters as f64) as f32, iters)
            })?
        }
        AttackKind::Jsma => jsma_search(net, x, y, schedule)?,
        AttackKind::DeepFool => {
            let adv = deepfool(net, x, y, schedule.deepfool_iters, schedule.deepfool_overshoot)?;
            let level = schedule.deepfool_iters as f64;
            let label = net.predict(&adv)?;
            (label != y).then_some((level, adv, label))
        }
        AttackKind::GaussianBlur => first_flip(net, y, &schedule.blur, |s| degrade(kind, x, s, seed))?,
        AttackKind::GaussianNoise => first_flip(net, y, &schedule.noise, |s| degrade(kind, x, s, seed))?,
        AttackKind::SaltPepper => {
            first_flip(net, y, &schedule.salt_pepper, |s| degrade(kind, x, s, seed))?
        }
    };
    Ok(match found {
        Some((level, x_adv, label)) => AttackResult {
            mse: attack_mse(x, &x_adv)?,
            x_adv,
            outcome: Outcome::FlippedLabel,
            kind,
            level_used: Some(level),
            adversarial_label: Some(label),
            target_model: None,
        },
        None => AttackResult::unchanged(x, kind, Outcome::BudgetExhausted),
    })
}

fn first_flip(
    net: &Network,
    y: usize,
    levels: &[f64],
    mut attack: impl FnMut(f64) -> Result<Tensor>,
) -> Result<Option<(f64, Tensor, usize)>> {
    for &level in levels {
        let adv = attack(level)?;
        let label = net.predict(&adv)?;
        if label != y {
            return Ok(Some((level, adv, label)));
        }
    }
    Ok(None)
}

fn jsma_search(
    net: &Network,
    x: &Tensor,
    y: usize,
    schedule: &BudgetSchedule,
) -> Result<Option<(f64, Tensor, usize)>> {
    let n = x.len();
    let cap = |f: f64| ((f * n as f64).ceil() as usize).max(1);
    if schedule.jsma_theta < 1.0 {
        return first_flip(net, y, &schedule.jsma, |f| {
            jsma(net, x, y, schedule.jsma_theta, cap(f))
        });
    }
    // With theta ≥ 1 every chosen feature saturates at once and is never
    // selected again, so a run under a smaller cap follows the same path
    // until the cap is reached and then stops. One run at the largest cap
    // therefore answers every level.
    let largest = cap(*schedule.jsma.last().expect("validated nonempty"));
    let run = super::jsma::run(net, x, y, schedule.jsma_theta, largest)?;
    if !run.flipped {
        return Ok(None);
    }
    let level = schedule
        .jsma
        .iter()
        .copied()
        .find(|&f| cap(f) >= run.pixels)
        .expect("pixels used never exceed the largest cap");
    let label = net.predict(&run.x_adv)?;
    Ok(Some((level, run.x_adv, label)))
}

/// Aggregate outcome of attacking a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub images: usize,
    /// Images the network classified correctly before the attack.
    pub attempted: usize,
    pub flipped: usize,
    pub already_misclassified: usize,
    pub exhausted: usize,
    /// `flipped / attempted`.
    pub success_rate: f64,
    /// Mean MSE over flipped images.
    pub mean_mse: Option<f64>,
}

/// Runs [`minimal_attack`] over every image in parallel. Image `i` uses
/// seed `mix(seed, i)`.
pub fn evaluate_attack(
    net: &Network,
    data: &Dataset,
    kind: AttackKind,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<AttackSummary> {
    let results = data
        .images()
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            minimal_attack(net, &img.pixels, img.label, kind, schedule, seed::mix(seed, i as u64))
                .map_err(|e| Error::Image {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(kind, &results))
}

pub(crate) fn summarize(kind: AttackKind, results: &[AttackResult]) -> AttackSummary {
    let count = |o| results.iter().filter(|r| r.outcome == o).count();
    let flipped = count(Outcome::FlippedLabel);
    let already = count(Outcome::AlreadyMisclassified);
    let exhausted = count(Outcome::BudgetExhausted);
    let attempted = flipped + exhausted;
    let mse_sum: f64 = results.iter().filter(|r| r.is_flipped()).map(|r| r.mse).sum();
    AttackSummary {
        kind,
        images: results.len(),
        attempted,
        flipped,
        already_misclassified: already,
        exhausted,
        success_rate: if attempted == 0 {
            0.0
        } else {
            flipped as f64 / attempted as f64
        },
        mean_mse: (flipped > 0).then(|| mse_sum / flipped as f64),
    }
}
