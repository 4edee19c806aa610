use rand::Rng;

use super::layer::{
    dense_backward, dense_forward, maxpool_backward, maxpool_forward, normalize_backward,
    normalize_forward, ConvGeom, Layer, LayerSpec,
};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{argmax, Tensor};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which output a derivative is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSpace {
    Softmax,
    Logits,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f32>,
    outputs: Vec<Vec<f32>>,
    pool_argmax: Vec<Option<Vec<u32>>>,
    dropout_masks: Vec<Option<Vec<f32>>>,
}

impl ForwardTrace {
    /// Activation produced by layer `i`.
    pub fn output(&self, i: usize) -> &[f32] {
        &self.outputs[i]
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn pool_argmax(&self, i: usize) -> Option<&[u32]> {
        self.pool_argmax[i].as_deref()
    }

    pub fn dropout_mask(&self, i: usize) -> Option<&[f32]> {
        self.dropout_masks[i].as_deref()
    }

    fn layer_input(&self, i: usize) -> &[f32] {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
    pub trace: ForwardTrace,
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub weight: Vec<Vec<f32>>,
    pub bias: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weight: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|g| g.fill(0.0));
    }
}

/// A feedforward classifier: an ordered layer stack ending in `K` logits,
/// followed by an implicit softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network with freshly initialized parameters.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let layers = specs
            .into_iter()
            .map(|s| Layer::initialized(s, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(input_shape, layers)
    }

    /// Builds a network from explicit `(spec, weight, bias)` triples.
    pub fn from_parts(
        input_shape: Vec<usize>,
        parts: Vec<(LayerSpec, Vec<f32>, Vec<f32>)>,
    ) -> Result<Self> {
        let layers = parts
            .into_iter()
            .map(|(s, w, b)| Layer::new(s, w, b))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(input_shape, layers)
    }

    fn assemble(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Network(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::Network("network has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for layer in &layers {
            current = layer.spec.output_shape(&current)?;
            shapes.push(current.clone());
        }
        if current.len() != 1 {
            return Err(Error::Network(format!(
                "final layer must produce a class vector, got shape {current:?}"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Replaces the parameters of layer `index`.
    pub fn set_params(&mut self, index: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<()> {
        let layer = self
            .layers
            .get(index)
            .ok_or_else(|| Error::Network(format!("no layer {index}")))?;
        self.layers[index] = Layer::new(layer.spec.clone(), weight, bias)?;
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::InputShape {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::Label {
                label: y,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Forward pass. Eval mode disables dropout and ignores `seed`.
    pub fn forward(&self, x: &Tensor, mode: Mode, seed: u64) -> Result<Forward> {
        self.check_input(x)?;
        Ok(match mode {
            Mode::Eval => self.run(x.data(), None::<&mut rand_chacha::ChaCha8Rng>),
            Mode::Train => self.run(x.data(), Some(&mut seed::rng(seed))),
        })
    }

    /// Runs every layer; dropout is active iff `rng` is given.
    pub(crate) fn run<R: Rng>(&self, x: &[f32], mut rng: Option<&mut R>) -> Forward {
        let n = self.layers.len();
        let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut pool_argmax = vec![None; n];
        let mut dropout_masks = vec![None; n];
        for (i, layer) in self.layers.iter().enumerate() {
            let input: &[f32] = if i == 0 { x } else { &outputs[i - 1] };
            let in_shape: &[usize] = if i == 0 { &self.input_shape } else { &self.shapes[i - 1] };
            let out = match &layer.spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                } => conv_geom(*in_channels, *out_channels, *kernel_h, *kernel_w, in_shape)
                    .forward(input, &layer.weight, &layer.bias),
                LayerSpec::MaxPool { window } => {
                    let (out, arg) = maxpool_forward(input, in_shape, *window);
                    pool_argmax[i] = Some(arg);
                    out
                }
                LayerSpec::Dense { .. } => dense_forward(input, &layer.weight, &layer.bias),
                LayerSpec::ReLU => input.iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::Dropout { p } => match rng.as_deref_mut() {
                    Some(r) if *p > 0.0 => {
                        let scale = 1.0 / (1.0 - p);
                        let mask: Vec<f32> = (0..input.len())
                            .map(|_| if r.random::<f32>() < *p { 0.0 } else { scale })
                            .collect();
                        let out = input.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        dropout_masks[i] = Some(mask);
                        out
                    }
                    _ => input.to_vec(),
                },
                LayerSpec::Flatten => input.to_vec(),
                LayerSpec::Normalize { mean, std } => normalize_forward(input, mean, std),
            };
            outputs.push(out);
        }
        let logits = outputs.last().cloned().unwrap_or_default();
        let probs = softmax(&logits);
        Forward {
            logits,
            probs,
            trace: ForwardTrace {
                input: x.to_vec(),
                outputs,
                pool_argmax,
                dropout_masks,
            },
        }
    }

    /// Backpropagates `grad_logits` through the trace. Parameter gradients are
    /// accumulated into `grads` when given; the input gradient is returned
    /// when `want_input` is set.
    pub(crate) fn backward(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[f32],
        mut grads: Option<&mut Gradients>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let mut g = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let need_input = want_input || i > 0;
            let input = trace.layer_input(i);
            let in_shape: &[usize] = if i == 0 { &self.input_shape } else { &self.shapes[i - 1] };
            let params = grads
                .as_deref_mut()
                .map(|gr| (gr.weight[i].as_mut_slice(), gr.bias[i].as_mut_slice()));
            let next = match &layer.spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                } => conv_geom(*in_channels, *out_channels, *kernel_h, *kernel_w, in_shape)
                    .backward(input, &g, &layer.weight, params, need_input),
                LayerSpec::Dense { .. } => dense_backward(input, &g, &layer.weight, params, need_input),
                _ if !need_input => None,
                LayerSpec::MaxPool { .. } => {
                    let arg = trace.pool_argmax[i].as_ref().expect("max-pool trace");
                    Some(maxpool_backward(&g, arg, input.len()))
                }
                LayerSpec::ReLU => Some(
                    g.iter()
                        .zip(&trace.outputs[i])
                        .map(|(gv, out)| if *out > 0.0 { *gv } else { 0.0 })
                        .collect(),
                ),
                LayerSpec::Dropout { .. } => Some(match &trace.dropout_masks[i] {
                    Some(mask) => g.iter().zip(mask).map(|(gv, m)| gv * m).collect(),
                    None => g,
                }),
                LayerSpec::Flatten => Some(g),
                LayerSpec::Normalize { std, .. } => Some(normalize_backward(&g, std)),
            };
            g = next?;
        }
        Some(g)
    }

    /// Class probabilities in eval mode.
    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<f32>> {
        Ok(self.forward(x, Mode::Eval, 0)?.probs)
    }

    /// Eval-mode predicted class.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.forward(x, Mode::Eval, 0)?.logits))
    }

    /// Gradient of the cross-entropy loss at `(x, y)` with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor, y: usize) -> Result<Tensor> {
        self.check_label(y)?;
        let fwd = self.forward(x, Mode::Eval, 0)?;
        let grad = cross_entropy_logit_grad(&fwd.probs, y);
        let gx = self.backward(&fwd.trace, &grad, None, true).expect("input gradient");
        Ok(x.with_data(gx))
    }

    /// Gradient of `<cotangent, f(x)>` with respect to `x`, where `f` is the
    /// chosen output space.
    pub fn vjp(&self, x: &Tensor, space: OutputSpace, cotangent: &[f32]) -> Result<Tensor> {
        let fwd = self.forward(x, Mode::Eval, 0)?;
        if cotangent.len() != self.num_classes() {
            return Err(Error::Dimension {
                expected: self.num_classes(),
                actual: cotangent.len(),
            });
        }
        Ok(x.with_data(self.vjp_traced(&fwd, space, cotangent)))
    }

    pub(crate) fn vjp_traced(&self, fwd: &Forward, space: OutputSpace, cotangent: &[f32]) -> Vec<f32> {
        let grad_logits = match space {
            OutputSpace::Logits => cotangent.to_vec(),
            OutputSpace::Softmax => softmax_vjp(&fwd.probs, cotangent),
        };
        self.backward(&fwd.trace, &grad_logits, None, true).expect("input gradient")
    }

    /// Jacobian of the outputs with respect to the input, shape `[K, n]`.
    pub fn output_jacobian(&self, x: &Tensor, space: OutputSpace) -> Result<Tensor> {
        let fwd = self.forward(x, Mode::Eval, 0)?;
        let k = self.num_classes();
        let data = self.jacobian_traced(&fwd, space);
        Tensor::new(vec![k, x.len()], data)
    }

    pub(crate) fn jacobian_traced(&self, fwd: &Forward, space: OutputSpace) -> Vec<f32> {
        let k = self.num_classes();
        let mut data = Vec::with_capacity(k * fwd.trace.input.len());
        let mut e = vec![0.0; k];
        for row in 0..k {
            e.fill(0.0);
            e[row] = 1.0;
            data.extend(self.vjp_traced(fwd, space, &e));
        }
        data
    }
}

fn conv_geom(
    in_channels: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    in_shape: &[usize],
) -> ConvGeom {
    ConvGeom {
        channels: in_channels,
        height: in_shape[1],
        width: in_shape[2],
        out_channels,
        kh,
        kw,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| f64::from(l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// `-ln(max(probs[y], PROB_FLOOR))`.
pub fn cross_entropy(probs: &[f32], y: usize) -> Result<f32> {
    let p = probs.get(y).ok_or(Error::Label {
        label: y,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `probs - onehot(y)`, with the true-class entry formed as minus the sum of
/// the other probabilities so it stays nonzero when `probs[y]` rounds to 1.
pub(crate) fn cross_entropy_logit_grad(probs: &[f32], y: usize) -> Vec<f32> {
    let mut g = probs.to_vec();
    let others: f64 = probs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != y)
        .map(|(_, &p)| f64::from(p))
        .sum();
    g[y] = -(others as f32);
    g
}

fn softmax_vjp(probs: &[f32], cotangent: &[f32]) -> Vec<f32> {
    let inner: f32 = probs.iter().zip(cotangent).map(|(p, c)| p * c).sum();
    probs
        .iter()
        .zip(cotangent)
        .map(|(p, c)| p * (c - inner))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(in_dim: usize, out_dim: usize, w: Vec<f32>, b: Vec<f32>) -> Network {
        Network::from_parts(vec![in_dim], vec![(LayerSpec::Dense { in_dim, out_dim }, w, b)]).unwrap()
    }

    #[test]
    fn zero_dense_layer_is_uniform() {
        let net = dense(4, 10, vec![0.0; 40], vec![0.0; 10]);
        let x = Tensor::new(vec![4], vec![0.3, 0.1, 0.9, 0.5]).unwrap();
        let p = net.probabilities(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-7));
    }

    #[test]
    fn identity_two_class_softmax() {
        let net = dense(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]);
        let x = Tensor::new(vec![2], vec![2.0, 0.0]).unwrap();
        let p = net.probabilities(&x).unwrap();
        // e^2 / (e^2 + 1)
        assert!((p[0] - 0.880_797).abs() < 1e-5);
        assert!((p[1] - 0.119_203).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_values() {
        let mut onehot = vec![0.0; 10];
        onehot[0] = 1.0;
        assert!(cross_entropy(&onehot, 0).unwrap() <= 1e-6);
        assert!((cross_entropy(&[0.1; 10], 4).unwrap() - 10f32.ln()).abs() < 1e-6);
        // -ln(0.1192)
        assert!((cross_entropy(&[0.8808, 0.1192], 1).unwrap() - 2.126_928).abs() < 1e-4);
        assert!(cross_entropy(&onehot, 1).unwrap().is_finite());
        assert!(matches!(cross_entropy(&onehot, 10), Err(Error::Label { .. })));
    }

    #[test]
    fn single_dense_gradient_is_w_transpose_residual() {
        let w = vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.5];
        let b = vec![0.1, -0.3];
        let net = dense(3, 2, w.clone(), b);
        let x = Tensor::new(vec![3], vec![0.2, 0.7, 0.4]).unwrap();
        let p = net.probabilities(&x).unwrap();
        let g = net.input_gradient(&x, 1).unwrap();
        let r = [p[0], p[1] - 1.0];
        for i in 0..3 {
            let expect = w[i] * r[0] + w[3 + i] * r[1];
            assert!((g.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_logit_jacobian_is_weight_matrix() {
        let w = vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.5];
        let net = dense(3, 2, w.clone(), vec![0.0; 2]);
        let x = Tensor::new(vec![3], vec![0.2, 0.7, 0.4]).unwrap();
        let j = net.output_jacobian(&x, OutputSpace::Logits).unwrap();
        assert_eq!(j.shape(), &[2, 3]);
        assert_eq!(j.data(), w.as_slice());
    }

    #[test]
    fn constant_network_has_zero_derivatives() {
        let net = Network::from_parts(
            vec![3],
            vec![
                (LayerSpec::Dense { in_dim: 3, out_dim: 4 }, vec![0.0; 12], vec![0.3, -0.1, 0.2, 0.5]),
                (LayerSpec::ReLU, vec![], vec![]),
                (LayerSpec::Dense { in_dim: 4, out_dim: 3 }, vec![0.7; 12], vec![0.0; 3]),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![3], vec![0.9, 0.1, 0.4]).unwrap();
        assert!(net.input_gradient(&x, 2).unwrap().data().iter().all(|&v| v == 0.0));
        for space in [OutputSpace::Softmax, OutputSpace::Logits] {
            let j = net.output_jacobian(&x, space).unwrap();
            assert!(j.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = dense(2, 2, vec![0.0; 4], vec![0.0; 2]);
        let x = Tensor::zeros(vec![3]);
        assert!(matches!(net.forward(&x, Mode::Eval, 0), Err(Error::InputShape { .. })));
    }

    #[test]
    fn rejects_incompatible_layers() {
        let r = Network::new(
            vec![1, 28, 28],
            vec![LayerSpec::Dense { in_dim: 784, out_dim: 10 }],
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let net = Network::new(
            vec![6],
            vec![
                LayerSpec::Dense { in_dim: 6, out_dim: 32 },
                LayerSpec::Dropout { p: 0.5 },
                LayerSpec::Dense { in_dim: 32, out_dim: 3 },
            ],
            3,
        )
        .unwrap();
        let x = Tensor::new(vec![6], vec![0.1, 0.5, 0.2, 0.9, 0.4, 0.3]).unwrap();
        let a = net.forward(&x, Mode::Eval, 1).unwrap();
        let b = net.forward(&x, Mode::Eval, 2).unwrap();
        assert_eq!(a.logits, b.logits);
        assert!(a.trace.dropout_mask(1).is_none());
        let t1 = net.forward(&x, Mode::Train, 9).unwrap();
        let t2 = net.forward(&x, Mode::Train, 9).unwrap();
        assert_eq!(t1.logits, t2.logits);
        let mask = t1.trace.dropout_mask(1).unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }
}
