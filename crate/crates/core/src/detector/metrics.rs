use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold-0 accuracy and F1, ROC AUC and recall of the attack class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Zero when nothing is predicted positive.
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    /// `None` when there are no attacks to detect.
    pub detection_rate: Option<f64>,
}

pub fn evaluate_metrics(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Data("metrics of an empty score list".into()));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > 0.0, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let f1 = if tp + fp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    let auc = match roc_auc(scores, labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        accuracy,
        f1,
        auc,
        detection_rate: (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64),
    })
}

/// Area under the ROC curve by trapezoidal integration over distinct score
/// thresholds. Tied scores form one diagonal segment.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Twice the area in units of one (pos, neg) cell, kept integral.
    let (mut tp, mut area2) = (0u128, 0u128);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut dtp, mut dfp) = (0u128, 0u128);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            k += 1;
        }
        area2 += dfp * (2 * tp + dtp);
        tp += dtp;
    }
    Ok(area2 as f64 / (2 * pos * neg) as f64)
}
