use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::AttackKind;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Applies a quality degradation at strength `level`.
///
/// - `GaussianBlur`: separable Gaussian with σ = `level`, kernel width the
///   smallest odd integer ≥ 4σ+1, half-sample reflect padding.
/// - `GaussianNoise`: `x + level·z` with `z ~ N(0, 1)` i.i.d., clipped.
/// - `SaltPepper`: a `level` fraction of spatial positions set to 0 or 1 in
///   every channel.
///
/// Random draws depend only on `seed` and the image shape, so a fixed seed
/// gives nested perturbations across levels. Level 0 returns `x` unchanged.
pub fn degrade(kind: AttackKind, x: &Tensor, level: f64, seed: u64) -> Result<Tensor> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Parameter(format!("degradation level must be nonnegative, got {level}")));
    }
    if !matches!(
        kind,
        AttackKind::GaussianBlur | AttackKind::GaussianNoise | AttackKind::SaltPepper
    ) {
        return Err(Error::Parameter(format!("{kind} is not a quality degradation")));
    }
    if kind == AttackKind::SaltPepper && level > 1.0 {
        return Err(Error::Parameter(format!("salt-and-pepper fraction above 1: {level}")));
    }
    let (c, h, w) = planes(x.shape())?;
    if level == 0.0 {
        return Ok(x.clone());
    }
    let data = match kind {
        AttackKind::GaussianBlur => blur(x.data(), c, h, w, level),
        AttackKind::GaussianNoise => {
            let mut rng = seed::rng(seed);
            x.data()
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    (f64::from(v) + level * z).clamp(0.0, 1.0) as f32
                })
                .collect()
        }
        AttackKind::SaltPepper => {
            let mut rng = seed::rng(seed);
            let plane = h * w;
            let mut order: Vec<usize> = (0..plane).collect();
            order.shuffle(&mut rng);
            let colors: Vec<bool> = (0..plane).map(|_| rng.random()).collect();
            let count = (level * plane as f64).round() as usize;
            let mut out = x.data().to_vec();
            for (&pos, &white) in order[..count].iter().zip(&colors) {
                for ch in 0..c {
                    out[ch * plane + pos] = if white { 1.0 } else { 0.0 };
                }
            }
            out
        }
        _ => unreachable!("checked above"),
    };
    Ok(x.with_data(data))
}

fn planes(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        [n] => Ok((1, 1, n)),
        _ => Err(Error::Parameter(format!("cannot degrade an image of shape {shape:?}"))),
    }
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let width = (4.0 * sigma + 1.0).ceil() as usize;
    let width = if width % 2 == 0 { width + 1 } else { width };
    let radius = (width / 2) as f64;
    let mut k: Vec<f64> = (0..width)
        .map(|i| {
            let d = i as f64 - radius;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric index: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        period as usize - 1 - m
    }
}

fn convolve_line(line: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = line.len();
    let r = (kernel.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        *o = kernel
            .iter()
            .enumerate()
            .map(|(j, k)| k * line[reflect(i as isize + j as isize - r, n)])
            .sum();
    }
}

fn blur(data: &[f32], c: usize, h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let mut out = Vec::with_capacity(data.len());
    let mut rows = vec![0.0f64; h * w];
    let mut line = vec![0.0f64; h.max(w)];
    let mut conv = vec![0.0f64; h.max(w)];
    for plane in data.chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                line[x] = f64::from(plane[y * w + x]);
            }
            convolve_line(&line[..w], &kernel, &mut rows[y * w..(y + 1) * w]);
        }
        let start = out.len();
        out.resize(start + h * w, 0.0);
        for x in 0..w {
            for y in 0..h {
                line[y] = rows[y * w + x];
            }
            convolve_line(&line[..h], &kernel, &mut conv[..h]);
            for y in 0..h {
                out[start + y * w + x] = conv[y].clamp(0.0, 1.0) as f32;
            }
        }
    }
    debug_assert_eq!(out.len(), c * h * w);
    out
}
