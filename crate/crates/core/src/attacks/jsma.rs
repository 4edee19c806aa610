use crate::error::{Error, Result};
use crate::nn::{Mode, Network, OutputSpace};
use crate::tensor::{argmax, Tensor};

pub(crate) struct JsmaRun {
    pub x_adv: Tensor,
    /// Distinct input features changed.
    pub pixels: usize,
    pub flipped: bool,
}

/// Untargeted saliency-map attack on softmax outputs.
///
/// Each step targets the runner-up class `t` at the current iterate and
/// raises (by `theta`, clipped) the feature maximizing
/// `α·|β|` subject to `α > 0, β < 0`, where `α = ∂f_t/∂p` and
/// `β = Σ_{j≠t} ∂f_j/∂p`. Stops on a label flip, when no feature is
/// admissible, or once `max_pixels` distinct features are saturated.
pub fn jsma(net: &Network, x: &Tensor, y: usize, theta: f32, max_pixels: usize) -> Result<Tensor> {
    Ok(run(net, x, y, theta, max_pixels)?.x_adv)
}

pub(crate) fn run(net: &Network, x: &Tensor, y: usize, theta: f32, max_pixels: usize) -> Result<JsmaRun> {
    if !(theta > 0.0) {
        return Err(Error::Parameter(format!("jsma theta must be positive, got {theta}")));
    }
    if max_pixels == 0 {
        return Err(Error::Parameter("jsma needs a pixel budget of at least one".into()));
    }
    if y >= net.num_classes() {
        return Err(Error::Label {
            label: y,
            classes: net.num_classes(),
        });
    }
    let k = net.num_classes();
    let mut cur = x.clone();
    let mut modified = vec![false; x.len()];
    let mut count = 0;
    // Every step raises some admissible feature toward 1, so the loop ends
    // after at most max_pixels * ceil(1 / theta) steps.
    loop {
        let fwd = net.forward(&cur, Mode::Eval, 0)?;
        if argmax(&fwd.logits) != y {
            return Ok(JsmaRun {
                x_adv: cur,
                pixels: count,
                flipped: true,
            });
        }
        let target = runner_up(&fwd.probs, y);
        let mut e_t = vec![0.0; k];
        e_t[target] = 1.0;
        let rest: Vec<f32> = e_t.iter().map(|v| 1.0 - v).collect();
        let alpha = net.vjp_traced(&fwd, OutputSpace::Softmax, &e_t);
        let beta = net.vjp_traced(&fwd, OutputSpace::Softmax, &rest);

        let mut best: Option<(usize, f32)> = None;
        for (p, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            let admissible = cur.data()[p] < 1.0 && (modified[p] || count < max_pixels);
            if !admissible || !(a > 0.0 && b < 0.0) {
                continue;
            }
            let score = a * b.abs();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((p, score));
            }
        }
        let Some((p, _)) = best else {
            return Ok(JsmaRun {
                x_adv: cur,
                pixels: count,
                flipped: false,
            });
        };
        let v = &mut cur.data_mut()[p];
        *v = (*v + theta).min(1.0);
        if !modified[p] {
            modified[p] = true;
            count += 1;
        }
    }
}

fn runner_up(probs: &[f32], top: usize) -> usize {
    let mut best = if top == 0 { 1 } else { 0 };
    for (i, &p) in probs.iter().enumerate() {
        if i != top && p > probs[best] {
            best = i;
        }
    }
    best
}
