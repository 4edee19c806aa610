//! Input derivatives against central finite differences of an independent
//! f64 forward pass.

use mismatch_core::nn::LayerSpec;
use mismatch_core::{Network, OutputSpace, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;

/// Plain f64 forward. Returns logits and the ReLU/max-pool pattern, so
/// callers can reject finite differences that straddle a kink.
pub fn reference(net: &Network, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut shape = net.input_shape().to_vec();
    let mut a = x.to_vec();
    let mut pattern = vec![];
    for layer in net.layers() {
        let w: Vec<f64> = layer.weight().iter().map(|&v| f64::from(v)).collect();
        let b: Vec<f64> = layer.bias().iter().map(|&v| f64::from(v)).collect();
        match layer.spec() {
            LayerSpec::Conv {
                in_channels: ci,
                out_channels: co,
                kernel_h: kh,
                kernel_w: kw,
            } => {
                let (h, wd) = (shape[1], shape[2]);
                let (oh, ow) = (h - kh + 1, wd - kw + 1);
                let mut out = vec![0.0; co * oh * ow];
                for o in 0..*co {
                    for y in 0..oh {
                        for x0 in 0..ow {
                            let mut s = b[o];
                            for c in 0..*ci {
                                for ky in 0..*kh {
                                    for kx in 0..*kw {
                                        s += w[((o * ci + c) * kh + ky) * kw + kx]
                                            * a[(c * h + y + ky) * wd + x0 + kx];
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + x0] = s;
                        }
                    }
                }
                a = out;
                shape = vec![*co, oh, ow];
            }
            LayerSpec::MaxPool { window: p } => {
                let (c, h, wd) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / p, wd / p);
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x0 in 0..ow {
                            let mut best = (f64::NEG_INFINITY, 0);
                            for dy in 0..*p {
                                for dx in 0..*p {
                                    let i = (ch * h + y * p + dy) * wd + x0 * p + dx;
                                    if a[i] > best.0 {
                                        best = (a[i], i);
                                    }
                                }
                            }
                            out[(ch * oh + y) * ow + x0] = best.0;
                            pattern.push(best.1);
                        }
                    }
                }
                a = out;
                shape = vec![c, oh, ow];
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                a = (0..*out_dim)
                    .map(|o| b[o] + (0..*in_dim).map(|i| w[o * in_dim + i] * a[i]).sum::<f64>())
                    .collect();
                shape = vec![*out_dim];
            }
            LayerSpec::ReLU => {
                pattern.extend(a.iter().map(|&v| usize::from(v > 0.0)));
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            LayerSpec::Dropout { .. } => {}
            LayerSpec::Flatten => shape = vec![a.len()],
            LayerSpec::Normalize { mean, std } => {
                let plane = a.len() / mean.len();
                for (i, v) in a.iter_mut().enumerate() {
                    let c = i / plane;
                    *v = (*v - f64::from(mean[c])) / f64::from(std[c]);
                }
            }
        }
    }
    (a, pattern)
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_net(rng: &mut ChaCha8Rng) -> Network {
    let k = rng.random_range(2..6);
    let seed = rng.random();
    if rng.random_bool(0.5) {
        let n = rng.random_range(3..40);
        let hidden = rng.random_range(2..24);
        Network::new(
            vec![n],
            vec![
                LayerSpec::Dense { in_dim: n, out_dim: hidden },
                LayerSpec::ReLU,
                LayerSpec::Dropout { p: 0.5 },
                LayerSpec::Dense { in_dim: hidden, out_dim: k },
            ],
            seed,
        )
        .unwrap()
    } else {
        let c = rng.random_range(1..3);
        let side = rng.random_range(6..12);
        let filters = rng.random_range(2..5);
        let ks = rng.random_range(2..4);
        let conv_side = side - ks + 1;
        let pooled = conv_side / 2;
        let flat = filters * pooled * pooled;
        let mean = (0..c).map(|_| rng.random_range(0.2..0.6)).collect();
        let std = (0..c).map(|_| rng.random_range(0.2..0.5)).collect();
        Network::new(
            vec![c, side, side],
            vec![
                LayerSpec::Normalize { mean, std },
                LayerSpec::Conv {
                    in_channels: c,
                    out_channels: filters,
                    kernel_h: ks,
                    kernel_w: ks,
                },
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::ReLU,
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: flat, out_dim: 12 },
                LayerSpec::ReLU,
                LayerSpec::Dense { in_dim: 12, out_dim: k },
            ],
            seed,
        )
        .unwrap()
    }
}

/// Central differences of every output in f64, or `None` when any probe
/// crosses a ReLU or max-pool switch.
fn fd_jacobian(net: &Network, x: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let (logits, base) = reference(net, x);
    let k = logits.len();
    let n = x.len();
    let mut jl = vec![0.0; k * n];
    let mut js = vec![0.0; k * n];
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + H;
        let (lp, pp) = reference(net, &xp);
        xp[i] = x[i] - H;
        let (lm, pm) = reference(net, &xp);
        xp[i] = x[i];
        if pp != base || pm != base {
            return None;
        }
        let (sp, sm) = (softmax(&lp), softmax(&lm));
        for c in 0..k {
            jl[c * n + i] = (lp[c] - lm[c]) / (2.0 * H);
            js[c * n + i] = (sp[c] - sm[c]) / (2.0 * H);
        }
    }
    Some((logits, vec![jl, js]))
}

fn rel_err(analytic: &[f32], oracle: &[f64]) -> f64 {
    let num: f64 = analytic
        .iter()
        .zip(oracle)
        .map(|(a, o)| (f64::from(*a) - o).powi(2))
        .sum();
    let den: f64 = oracle.iter().map(|o| o * o).sum();
    num.sqrt() / den.sqrt().max(1e-8)
}

/// Largest relative error of the logit Jacobian, softmax Jacobian and loss
/// gradient over `nets` random networks, each at a point where no ReLU or
/// pooling choice changes within the difference step.
pub fn worst_relative_error(nets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < nets {
        let net = random_net(&mut rng);
        let n: usize = net.input_shape().iter().product();
        let x: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
        let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let Some((logits, jacs)) = fd_jacobian(&net, &x64) else {
            continue;
        };
        let xt = Tensor::new(net.input_shape().to_vec(), x).unwrap();
        let k = logits.len();

        let jl = net.output_jacobian(&xt, OutputSpace::Logits).unwrap();
        let js = net.output_jacobian(&xt, OutputSpace::Softmax).unwrap();
        for c in 0..k {
            let row = c * n..(c + 1) * n;
            worst = worst.max(rel_err(&jl.data()[row.clone()], &jacs[0][row.clone()]));
            worst = worst.max(rel_err(&js.data()[row.clone()], &jacs[1][row]));
        }

        // d(-log p_y)/dx = -(1/p_y) dp_y/dx
        let y = rng.random_range(0..k);
        let p = softmax(&logits);
        let oracle: Vec<f64> = jacs[1][y * n..(y + 1) * n].iter().map(|d| -d / p[y]).collect();
        let g = net.input_gradient(&xt, y).unwrap();
        worst = worst.max(rel_err(g.data(), &oracle));
        checked += 1;
    }
    worst
}
