use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::network::{cross_entropy, cross_entropy_logit_grad, Gradients, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Mini-batch SGD settings. Momentum and weight decay follow the usual
/// `v = m·v + (g + λ·w); w -= lr·v` form; the learning rate is multiplied by
/// `lr_decay_factor` after `lr_patience` epochs without a validation gain.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_decay_factor: f32,
    pub lr_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Fixed-rate plain SGD: lr 0.01, batches of 64, 10 epochs.
    pub fn mnist(seed: u64) -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 10,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_decay_factor: 1.0,
            lr_patience: 10,
            seed,
        }
    }

    /// Momentum SGD with L2 and plateau decay, shortened for desk-scale runs.
    pub fn cifar_small(seed: u64) -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 20,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_factor: 0.1,
            lr_patience: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

/// Eval-mode accuracy over a dataset.
pub fn evaluate_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let correct = data
        .images()
        .par_iter()
        .map(|img| net.predict(&img.pixels).map(|p| usize::from(p == img.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

fn check_dataset(net: &Network, d: &Dataset, what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Data(format!("{what} dataset is empty")));
    }
    if d.image_shape() != Some(net.input_shape()) {
        return Err(Error::InputShape {
            expected: net.input_shape().to_vec(),
            actual: d.image_shape().unwrap_or_default().to_vec(),
        });
    }
    if d.num_classes() > net.num_classes() {
        return Err(Error::Label {
            label: d.num_classes() - 1,
            classes: net.num_classes(),
        });
    }
    Ok(())
}

/// Trains `net` with mini-batch SGD and returns it with one entry of
/// history per epoch. Runs are bit-reproducible for a fixed seed.
pub fn train_sgd(
    mut net: Network,
    train: &Dataset,
    valid: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    check_dataset(&net, train, "training")?;
    check_dataset(&net, valid, "validation")?;

    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut velocity = Gradients::zeros_like(&net);
    let mut lr = cfg.learning_rate;
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                let img = &train.images()[i];
                let fwd = net.run(img.pixels.data(), Some(&mut rng));
                loss_sum += f64::from(cross_entropy(&fwd.probs, img.label)?);
                let g = cross_entropy_logit_grad(&fwd.probs, img.label);
                net.backward(&fwd.trace, &g, Some(&mut grads), false);
            }
            let scale = 1.0 / batch.len() as f32;
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                let params = [
                    (&mut layer.weight, &grads.weight[l], &mut velocity.weight[l]),
                    (&mut layer.bias, &grads.bias[l], &mut velocity.bias[l]),
                ];
                for (p, g, v) in params {
                    for ((w, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        let step = gi * scale + cfg.weight_decay * *w;
                        *vi = cfg.momentum * *vi + step;
                        *w -= lr * *vi;
                    }
                }
            }
        }
        if loss_sum.is_nan() {
            return Err(Error::Training(format!("loss diverged in epoch {epoch}")));
        }
        let valid_accuracy = evaluate_accuracy(&net, valid)?;
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / train.len() as f64,
            valid_accuracy,
        });
        if valid_accuracy > best {
            best = valid_accuracy;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.lr_patience && cfg.lr_decay_factor < 1.0 {
                lr *= cfg.lr_decay_factor;
                stale = 0;
            }
        }
    }
    Ok((net, history))
}
