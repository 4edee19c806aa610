use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBF kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    /// `1 / (d · Var(all feature components))`, variance floored at 1e-12.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    /// Iteration cap, in passes over the training set.
    pub max_passes: usize,
    pub cache_bytes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: Gamma::Auto,
            tolerance: 1e-3,
            max_passes: 10_000,
            cache_bytes: 512 << 20,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        let gamma_ok = match self.gamma {
            Gamma::Auto => true,
            Gamma::Value(g) => g > 0.0 && g.is_finite(),
        };
        if !(self.c > 0.0) || !self.c.is_finite() || !gamma_ok || !(self.tolerance > 0.0) || self.max_passes == 0 {
            return Err(Error::Parameter(format!("invalid SVM parameters {self:?}")));
        }
        Ok(())
    }
}

pub(crate) fn auto_gamma(points: &[&[f32]]) -> f64 {
    let dim = points.first().map_or(1, |p| p.len()).max(1);
    let count = (points.len() * dim) as f64;
    let mean = points.iter().flat_map(|p| p.iter()).map(|&v| f64::from(v)).sum::<f64>() / count;
    let var = points
        .iter()
        .flat_map(|p| p.iter())
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / count;
    1.0 / (dim as f64 * var.max(1e-12))
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Dual solution of the soft-margin SVM
/// `min ½ αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j k(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    /// `max_{I_up} −y∇f − min_{I_low} −y∇f` at termination.
    pub max_violation: f64,
    pub converged: bool,
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Box<[f64]>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64, cache_bytes: usize) -> Self {
        let n = x.len();
        let capacity = (cache_bytes / (8 * n.max(1))).clamp(2, n.max(2));
        Self {
            x,
            gamma,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        while self.order.len() >= self.capacity {
            let old = self.order.pop_front().expect("nonempty");
            self.rows[old] = None;
        }
        let xi = &self.x[i];
        let row = self.x.iter().map(|xj| rbf(xi, xj, self.gamma)).collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    /// Rows `i` and `j`, both resident.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        // Loading j may have evicted i; reloading i cannot evict j, the most
        // recent entry, since capacity ≥ 2.
        self.ensure(i);
        (self.rows[i].as_deref().unwrap(), self.rows[j].as_deref().unwrap())
    }
}

/// Sequential minimal optimization with second-order working-set selection.
pub fn solve_smo(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, tolerance: f64, max_iterations: usize, cache_bytes: usize) -> SmoSolution {
    const TAU: f64 = 1e-12;
    let n = x.len();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut cache = KernelRows::new(x, gamma, cache_bytes);
    let diag: Vec<f64> = x.iter().map(|xi| rbf(xi, xi, gamma)).collect();
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut violation;
    let converged = loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
            }
        }
        violation = gmax - gmin;
        if i == usize::MAX || violation < tolerance {
            break true;
        }
        if iterations >= max_iterations {
            break false;
        }
        cache.ensure(i);
        let ki = cache.rows[i].as_deref().unwrap();
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if !low(alpha[t], y[t]) || v >= gmax {
                continue;
            }
            let b = gmax - v;
            let mut a = diag[i] + diag[t] - 2.0 * ki[t];
            if a <= 0.0 {
                a = TAU;
            }
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j = t;
            }
        }
        if j == usize::MAX {
            break true;
        }
        iterations += 1;
        let (ki, kj) = cache.pair(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let a = diag[i] + diag[j] - 2.0 * ki[j];
            if a <= 0.0 {
                TAU
            } else {
                a
            }
        };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    };

    // ρ from free vectors, or the midpoint of the feasible interval.
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c) == (y[t] < 0.0) {
            // upper-bounded negative or zero positive
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    SmoSolution {
        alpha,
        bias: -rho,
        objective,
        iterations,
        max_violation: violation,
        converged,
    }
}

/// RBF-kernel support-vector classifier; label 1 iff the score is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support: Vec<Vec<f32>>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    /// `Σ α_i y_i k(s_i, f) + b` and the predicted label.
    pub fn score(&self, f: &[f32]) -> Result<(f64, u8)> {
        if f.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: f.len(),
            });
        }
        let s = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, a)| {
                let d: f64 = sv
                    .iter()
                    .zip(f)
                    .map(|(p, q)| {
                        let t = f64::from(*p) - f64::from(*q);
                        t * t
                    })
                    .sum();
                a * (-self.gamma * d).exp()
            })
            .sum::<f64>()
            + self.bias;
        Ok((s, u8::from(s > 0.0)))
    }
}

/// Trains on feature rows with 0/1 labels.
pub fn svm_fit(features: &[&[f32]], labels: &[u8], params: &SvmParams) -> Result<SvmModel> {
    params.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Dimension {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let dim = features.first().map_or(0, |f| f.len());
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: bad.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Training("labels must be 0 or 1".into()));
    }
    if positives == 0 || positives == labels.len() {
        return Err(Error::Training("both classes must be present to train a detector".into()));
    }
    let gamma = match params.gamma {
        Gamma::Auto => auto_gamma(features),
        Gamma::Value(g) => g,
    };
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let cap = params.max_passes.saturating_mul(x.len());
    let sol = solve_smo(&x, &y, params.c, gamma, params.tolerance, cap, params.cache_bytes);
    let (support, coef) = sol
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 0.0)
        .map(|(i, a)| (features[i].to_vec(), a * y[i]))
        .unzip();
    Ok(SvmModel {
        support,
        coef,
        bias: sol.bias,
        gamma,
        c: params.c,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}
