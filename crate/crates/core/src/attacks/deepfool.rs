use crate::error::{Error, Result};
use crate::nn::{Mode, Network, OutputSpace};
use crate::tensor::{argmax, Tensor};

/// Slack added to each linearized step so iterates cannot settle exactly on a
/// boundary, where the step length would vanish.
const STEP_SLACK: f64 = 1e-5;

/// Multi-class DeepFool on logits.
///
/// At each iterate the boundary `k ≠ y` with the smallest linearized distance
/// `|f_k − f_y| / ‖∇f_k − ∇f_y‖` is crossed by the minimal L2 step
/// `rᵢ = (|f_k − f_y| + 1e-5)·w / ‖w‖²`. Steps accumulate in f64 and the
/// returned image is `clip(x + (1 + overshoot)·Σ rᵢ)`.
pub fn deepfool(net: &Network, x: &Tensor, y: usize, max_iters: usize, overshoot: f32) -> Result<Tensor> {
    if max_iters == 0 {
        return Err(Error::Parameter("deepfool needs at least one iteration".into()));
    }
    if !(overshoot >= 0.0) {
        return Err(Error::Parameter(format!("deepfool overshoot must be nonnegative, got {overshoot}")));
    }
    let k = net.num_classes();
    if y >= k {
        return Err(Error::Label { label: y, classes: k });
    }
    let n = x.len();
    let scale = 1.0 + f64::from(overshoot);
    let mut r_tot = vec![0.0f64; n];
    let mut cur = x.clone();
    for _ in 0..max_iters {
        let fwd = net.forward(&cur, Mode::Eval, 0)?;
        if argmax(&fwd.logits) != y {
            break;
        }
        let jac = net.jacobian_traced(&fwd, OutputSpace::Logits);
        let row = |c: usize| &jac[c * n..(c + 1) * n];
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for c in (0..k).filter(|&c| c != y) {
            let w: Vec<f64> = row(c)
                .iter()
                .zip(row(y))
                .map(|(a, b)| f64::from(*a) - f64::from(*b))
                .collect();
            let norm_sq: f64 = w.iter().map(|v| v * v).sum();
            if norm_sq == 0.0 {
                continue;
            }
            let f = f64::from(fwd.logits[c]) - f64::from(fwd.logits[y]);
            let dist = f.abs() / norm_sq.sqrt();
            if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
                best = Some((dist, (f.abs() + STEP_SLACK) / norm_sq, w));
            }
        }
        // Locally constant logits: no direction to follow.
        let Some((_, coef, w)) = best else { break };
        for (r, wi) in r_tot.iter_mut().zip(&w) {
            *r += coef * wi;
        }
        let data = x
            .data()
            .iter()
            .zip(&r_tot)
            .map(|(&v, &r)| (f64::from(v) + scale * r).clamp(0.0, 1.0) as f32)
            .collect();
        cur = x.with_data(data);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn linear(w: Vec<f32>, b: Vec<f32>, n: usize) -> Network {
        let k = b.len();
        Network::from_parts(vec![n], vec![(LayerSpec::Dense { in_dim: n, out_dim: k }, w, b)]).unwrap()
    }

    #[test]
    fn misclassified_input_takes_no_step() {
        let net = linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let x = Tensor::new(vec![2], vec![0.1, 0.6]).unwrap();
        assert_eq!(deepfool(&net, &x, 0, 50, 0.02).unwrap(), x);
    }

    #[test]
    fn binary_linear_step_lands_on_boundary() {
        // f = l1 - l0 = (0.5, -0.25) · x + 0.05, w = (0.5, -0.25)
        let net = linear(vec![0.0, 0.0, 0.5, -0.25], vec![0.0, 0.05], 2);
        let x = Tensor::new(vec![2], vec![0.3, 0.9]).unwrap();
        let adv = deepfool(&net, &x, 0, 1, 0.0).unwrap();
        let f = 0.5 * adv.data()[0] - 0.25 * adv.data()[1] + 0.05;
        assert!(f.abs() <= 1e-4, "residual {f}");
        // r ≈ -f(x) w / |w|^2 with f(x) = -0.025, |w|^2 = 0.3125
        assert!((adv.data()[0] - (0.3 + 0.04)).abs() < 1e-4);
        assert!((adv.data()[1] - (0.9 - 0.02)).abs() < 1e-4);
    }

    #[test]
    fn overshoot_crosses_the_boundary() {
        let net = linear(vec![0.0, 0.0, 0.5, -0.25], vec![0.0, 0.05], 2);
        let x = Tensor::new(vec![2], vec![0.3, 0.9]).unwrap();
        let adv = deepfool(&net, &x, 0, 50, 0.02).unwrap();
        assert_eq!(net.predict(&adv).unwrap(), 1);
    }

    #[test]
    fn three_class_chooses_nearest_linearized_boundary() {
        // Logits: l0 = 0, l1 = x0 - 0.5, l2 = 2 x1 - 0.9 at x = (0.2, 0.3):
        // boundary 1 at |−0.3|/1 = 0.3, boundary 2 at |−0.3|/2 = 0.15.
        let net = linear(vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0], vec![0.0, -0.5, -0.9], 2);
        let x = Tensor::new(vec![2], vec![0.2, 0.3]).unwrap();
        let adv = deepfool(&net, &x, 0, 1, 0.0).unwrap();
        assert!((adv.data()[0] - 0.2).abs() < 1e-7);
        assert!((adv.data()[1] - 0.45).abs() < 1e-4);
    }

    #[test]
    fn output_stays_in_unit_range() {
        let net = linear(vec![0.0, 0.0, 5.0, 5.0], vec![0.0, -9.5], 2);
        let x = Tensor::new(vec![2], vec![0.9, 0.8]).unwrap();
        let adv = deepfool(&net, &x, 0, 50, 0.02).unwrap();
        assert!(adv.is_unit_range());
    }

    #[test]
    fn rejects_bad_parameters() {
        let net = linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let x = Tensor::new(vec![2], vec![0.5, 0.1]).unwrap();
        assert!(deepfool(&net, &x, 0, 0, 0.02).is_err());
        assert!(deepfool(&net, &x, 0, 5, -1.0).is_err());
        assert!(deepfool(&net, &x, 3, 5, 0.0).is_err());
    }
}
