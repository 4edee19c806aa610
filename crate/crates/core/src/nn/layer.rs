use rand::Rng;

use crate::error::{Error, Result};

/// One stage of a feedforward network.
///
/// Convolutions are valid (no padding) with stride 1. Max pooling uses
/// non-overlapping square windows and drops any remainder rows/columns.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    MaxPool {
        window: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    ReLU,
    Dropout {
        p: f32,
    },
    Flatten,
    /// Frozen per-channel standardization `(x - mean) / std`.
    Normalize {
        mean: Vec<f32>,
        std: Vec<f32>,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Network(msg));
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                if [*in_channels, *out_channels, *kernel_h, *kernel_w].contains(&0) {
                    return bad(format!("conv extents must be positive: {self:?}"));
                }
            }
            LayerSpec::MaxPool { window } if *window == 0 => {
                return bad("max-pool window must be positive".into());
            }
            LayerSpec::Dense { in_dim, out_dim } if *in_dim == 0 || *out_dim == 0 => {
                return bad(format!("dense extents must be positive: {self:?}"));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(p) => {
                return bad(format!("dropout probability {p} outside [0, 1)"));
            }
            LayerSpec::Normalize { mean, std } => {
                if mean.is_empty() || mean.len() != std.len() {
                    return bad("normalize needs one mean and one std per channel".into());
                }
                if std.iter().any(|s| !(*s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                    return bad("normalize std entries must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let incompatible = || {
            Err(Error::Network(format!(
                "layer {self:?} cannot take input of shape {input:?}"
            )))
        };
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => match input {
                [c, h, w] if c == in_channels && h >= kernel_h && w >= kernel_w => {
                    Ok(vec![*out_channels, h - kernel_h + 1, w - kernel_w + 1])
                }
                _ => incompatible(),
            },
            LayerSpec::MaxPool { window } => match input {
                [c, h, w] if h >= window && w >= window => Ok(vec![*c, h / window, w / window]),
                _ => incompatible(),
            },
            LayerSpec::Dense { in_dim, out_dim } => match input {
                [n] if n == in_dim => Ok(vec![*out_dim]),
                _ => incompatible(),
            },
            LayerSpec::Normalize { mean, .. } => match input.first() {
                Some(c) if *c == mean.len() => Ok(input.to_vec()),
                _ => incompatible(),
            },
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Lengths of the (weight, bias) buffers the layer owns.
    pub(crate) fn param_lens(&self) -> (usize, usize) {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => (out_channels * in_channels * kernel_h * kernel_w, *out_channels),
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, *out_dim),
            _ => (0, 0),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => (in_channels * kernel_h * kernel_w, out_channels * kernel_h * kernel_w),
            LayerSpec::Dense { in_dim, out_dim } => (*in_dim, *out_dim),
            _ => (0, 0),
        }
    }
}

/// A layer together with its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) weight: Vec<f32>,
    pub(crate) bias: Vec<f32>,
}

impl Layer {
    pub(crate) fn new(spec: LayerSpec, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        let (wl, bl) = spec.param_lens();
        if weight.len() != wl || bias.len() != bl {
            return Err(Error::Network(format!(
                "{spec:?} expects {wl} weights and {bl} biases, got {} and {}",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self { spec, weight, bias })
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub(crate) fn initialized<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (wl, bl) = spec.param_lens();
        let (fan_in, fan_out) = spec.fans();
        let weight = if wl > 0 {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            (0..wl).map(|_| rng.random_range(-limit..=limit)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            weight,
            bias: vec![0.0; bl],
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Geometry of one valid stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kw + 1
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Unrolls the input into a `patch × positions` matrix.
    fn im2col(&self, input: &[f32]) -> Vec<f32> {
        let (oh, ow, p) = (self.out_h(), self.out_w(), self.positions());
        let mut col = vec![0.0; self.patch() * p];
        let mut k = 0;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut col[k * p..(k + 1) * p];
                    for oy in 0..oh {
                        let src = (oy + ky) * self.width + kx;
                        row[oy * ow..(oy + 1) * ow].copy_from_slice(&plane[src..src + ow]);
                    }
                    k += 1;
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32]) -> Vec<f32> {
        let (oh, ow, p) = (self.out_h(), self.out_w(), self.positions());
        let mut out = vec![0.0; self.channels * self.height * self.width];
        let mut k = 0;
        for c in 0..self.channels {
            let plane = &mut out[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &col[k * p..(k + 1) * p];
                    for oy in 0..oh {
                        let dst = (oy + ky) * self.width + kx;
                        for (d, s) in plane[dst..dst + ow].iter_mut().zip(&row[oy * ow..(oy + 1) * ow]) {
                            *d += s;
                        }
                    }
                    k += 1;
                }
            }
        }
        out
    }

    pub fn forward(&self, input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
        let col = self.im2col(input);
        let (kk, p) = (self.patch(), self.positions());
        let mut out = vec![0.0; self.out_channels * p];
        for oc in 0..self.out_channels {
            let dst = &mut out[oc * p..(oc + 1) * p];
            dst.fill(bias[oc]);
            let w = &weight[oc * kk..(oc + 1) * kk];
            for (k, &wk) in w.iter().enumerate() {
                if wk != 0.0 {
                    axpy(wk, &col[k * p..(k + 1) * p], dst);
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients (when given) and returns the input
    /// gradient (when requested).
    pub fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        weight: &[f32],
        params: Option<(&mut [f32], &mut [f32])>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let (kk, p) = (self.patch(), self.positions());
        if let Some((gw, gb)) = params {
            let col = self.im2col(input);
            for oc in 0..self.out_channels {
                let g = &grad_out[oc * p..(oc + 1) * p];
                gb[oc] += g.iter().sum::<f32>();
                let gw_row = &mut gw[oc * kk..(oc + 1) * kk];
                for (k, dw) in gw_row.iter_mut().enumerate() {
                    *dw += dot(g, &col[k * p..(k + 1) * p]);
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut gcol = vec![0.0; kk * p];
        for oc in 0..self.out_channels {
            let g = &grad_out[oc * p..(oc + 1) * p];
            for (k, &wk) in weight[oc * kk..(oc + 1) * kk].iter().enumerate() {
                axpy(wk, g, &mut gcol[k * p..(k + 1) * p]);
            }
        }
        Some(self.col2im(&gcol))
    }
}

/// Non-overlapping max pooling; returns the output and the flat input index
/// of each maximum.
pub(crate) fn maxpool_forward(input: &[f32], shape: &[usize], window: usize) -> (Vec<f32>, Vec<u32>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / window, w / window);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * window + dy) * w + ox * window + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(grad_out: &[f32], argmax: &[u32], input_len: usize) -> Vec<f32> {
    let mut g = vec![0.0; input_len];
    for (&go, &idx) in grad_out.iter().zip(argmax) {
        g[idx as usize] += go;
    }
    g
}

pub(crate) fn dense_forward(input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + dot(&weight[o * n..(o + 1) * n], input))
        .collect()
}

pub(crate) fn dense_backward(
    input: &[f32],
    grad_out: &[f32],
    weight: &[f32],
    params: Option<(&mut [f32], &mut [f32])>,
    want_input: bool,
) -> Option<Vec<f32>> {
    let n = input.len();
    if let Some((gw, gb)) = params {
        for (o, &g) in grad_out.iter().enumerate() {
            gb[o] += g;
            if g != 0.0 {
                axpy(g, input, &mut gw[o * n..(o + 1) * n]);
            }
        }
    }
    if !want_input {
        return None;
    }
    let mut gin = vec![0.0; n];
    for (o, &g) in grad_out.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &weight[o * n..(o + 1) * n], &mut gin);
        }
    }
    Some(gin)
}

pub(crate) fn normalize_forward(input: &[f32], mean: &[f32], std: &[f32]) -> Vec<f32> {
    let plane = input.len() / mean.len();
    input
        .chunks(plane)
        .zip(mean.iter().zip(std))
        .flat_map(|(chunk, (&m, &s))| chunk.iter().map(move |v| (v - m) / s))
        .collect()
}

pub(crate) fn normalize_backward(grad_out: &[f32], std: &[f32]) -> Vec<f32> {
    let plane = grad_out.len() / std.len();
    grad_out
        .chunks(plane)
        .zip(std)
        .flat_map(|(chunk, &s)| chunk.iter().map(move |g| g / s))
        .collect()
}
