use super::sign;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// `clip(x + eps * sign(∇x J(x, y)))`.
pub fn fgsm(net: &Network, x: &Tensor, y: usize, eps: f32) -> Result<Tensor> {
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("fgsm budget must be nonnegative, got {eps}")));
    }
    let grad = net.input_gradient(x, y)?;
    Ok(step(x, &grad, eps))
}

pub(crate) fn step(x: &Tensor, grad: &Tensor, eps: f32) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(v, g)| (v + eps * sign(*g)).clamp(0.0, 1.0))
        .collect();
    x.with_data(data)
}

/// Repeated FGSM steps of size `eps_step`, clipping after each one and
/// stopping as soon as the prediction leaves `y`.
pub fn igsm(net: &Network, x: &Tensor, y: usize, eps_step: f32, max_iters: usize) -> Result<Tensor> {
    if !(eps_step >= 0.0) {
        return Err(Error::Parameter(format!("igsm step must be nonnegative, got {eps_step}")));
    }
    if max_iters == 0 {
        return Err(Error::Parameter("igsm needs at least one iteration".into()));
    }
    let mut cur = x.clone();
    for _ in 0..max_iters {
        let grad = net.input_gradient(&cur, y)?;
        cur = step(&cur, &grad, eps_step);
        if net.predict(&cur)? != y {
            break;
        }
    }
    Ok(cur)
}
