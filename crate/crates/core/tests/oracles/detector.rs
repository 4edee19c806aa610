//! SMO against a projected-gradient QP solve, and trapezoidal AUC against
//! the pairwise (Mann–Whitney) statistic.

use mismatch_core::detector::{roc_auc, solve_smo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| {
            x.iter()
                .map(|b| (-gamma * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp())
                .collect()
        })
        .collect()
}

/// Euclidean projection onto `{0 ≤ α ≤ c, yᵀα = 0}`: `α = clip(v − ν y)`
/// with `ν` found by bisection, since `yᵀα(ν)` is nonincreasing.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let balance = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().map(|t| t.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

fn dual_objective(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let quad: f64 = (0..a.len())
        .map(|i| (0..a.len()).map(|j| a[i] * q[i][j] * a[j]).sum::<f64>())
        .sum();
    0.5 * quad - a.iter().sum::<f64>()
}

/// Accelerated projected gradient on the dense dual.
fn qp_oracle(k: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();
    // Gershgorin bound on the largest eigenvalue.
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * z[j]).sum::<f64>() - 1.0)
            .collect();
        let step: Vec<f64> = z.iter().zip(&grad).map(|(zi, g)| zi - g / lip).collect();
        let next = project(&step, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&a)
            .map(|(nx, ax)| nx + (t - 1.0) / t_next * (nx - ax))
            .collect();
        let moved: f64 = next.iter().zip(&a).map(|(p, q)| (p - q).abs()).sum();
        a = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    dual_objective(&q, &a)
}

/// Worst objective gap to the QP oracle and worst final KKT violation over
/// `problems` random 16-point problems; `None` if any solve did not converge
/// or left the box.
pub fn smo_worst_gap(problems: usize, seed: u64) -> Option<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gap, mut violation) = (0.0f64, 0.0f64);
    for _ in 0..problems {
        let dim = rng.random_range(2..6);
        let x: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut y: Vec<f64> = (0..16).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let gamma = rng.random_range(0.5..8.0);
        let c = 1.0;
        let sol = solve_smo(&x, &y, c, gamma, 1e-3, 10_000 * 16, 1 << 20);
        if !sol.converged || !sol.alpha.iter().all(|a| (0.0..=c).contains(a)) {
            return None;
        }
        let k = kernel(&x, gamma);
        let q: Vec<Vec<f64>> = (0..16)
            .map(|i| (0..16).map(|j| y[i] * y[j] * k[i][j]).collect())
            .collect();
        // The reported objective must be the objective of the returned α.
        if (dual_objective(&q, &sol.alpha) - sol.objective).abs() > 1e-9 {
            return None;
        }
        gap = gap.max((sol.objective - qp_oracle(&k, &y, c)).abs());
        violation = violation.max(sol.max_violation);
    }
    Some((gap, violation))
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Worst gap between trapezoidal AUC and the pairwise statistic over `sets`
/// random tie-heavy score sets.
pub fn auc_worst_gap(sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = rng.random_range(2..400);
        // Coarse scores force plenty of ties.
        let levels = rng.random_range(2..50);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| (rng.random_range(0..levels) as f64 + f64::from(l) * 3.0) / levels as f64)
            .collect();
        let got = roc_auc(&scores, &labels).unwrap();
        worst = worst.max((got - pairwise_auc(&scores, &labels)).abs());
    }
    worst
}
