use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_metrics, MetricsReport};
use super::svm::{svm_fit, SvmModel, SvmParams};
use super::DetectionDataset;
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::seed;

pub fn svm_train(d: &DetectionDataset, params: &SvmParams) -> Result<SvmModel> {
    let rows: Vec<&[f32]> = d.samples.iter().map(|s| s.features.values()).collect();
    svm_fit(&rows, &d.labels(), params)
}

fn score_all(model: &SvmModel, d: &DetectionDataset) -> Result<Vec<f64>> {
    d.samples
        .iter()
        .map(|s| model.score(s.features.values()).map(|(v, _)| v))
        .collect()
}

/// Fold id per sample. Within each class, samples are ordered by source
/// index, shuffled with `seed` and dealt round-robin, so the assignment does
/// not depend on storage order.
pub fn stratified_folds(d: &DetectionDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if k > d.len() {
        return Err(Error::Size {
            requested: k,
            available: d.len(),
        });
    }
    let mut rng = seed::rng(seed);
    let mut fold = vec![0; d.len()];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.samples[i].label == class).collect();
        members.sort_by_key(|&i| (d.samples[i].source_index, i));
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

fn sorted_subset(d: &DetectionDataset, mut idx: Vec<usize>) -> DetectionDataset {
    idx.sort_by_key(|&i| (d.samples[i].source_index, i));
    d.subset(&idx)
}

fn train_and_test(
    d: &DetectionDataset,
    fold: &[usize],
    test_fold: usize,
    params: &SvmParams,
) -> Result<(MetricsReport, bool)> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| fold[i] == test_fold);
    let model = svm_train(&sorted_subset(d, train), params)?;
    let test = sorted_subset(d, test);
    Ok((evaluate_metrics(&score_all(&model, &test)?, &test.labels())?, model.converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<MetricsReport>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    /// Over folds where AUC is defined.
    pub mean_auc: Option<f64>,
    /// Over folds that contain attacks.
    pub mean_detection_rate: Option<f64>,
    /// Folds whose solver stopped at the iteration cap.
    pub unconverged: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Stratified k-fold cross-validation of the SVM detector.
pub fn kfold_cv(d: &DetectionDataset, k: usize, params: &SvmParams, seed: u64) -> Result<CvReport> {
    let fold = stratified_folds(d, k, seed)?;
    let runs = (0..k)
        .map(|f| train_and_test(d, &fold, f, params))
        .collect::<Result<Vec<_>>>()?;
    let unconverged = runs.iter().filter(|(_, ok)| !ok).count();
    let folds: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
    Ok(CvReport {
        unconverged,
        mean_accuracy: mean(folds.iter().map(|r| r.accuracy)).unwrap_or(0.0),
        mean_f1: mean(folds.iter().map(|r| r.f1)).unwrap_or(0.0),
        mean_auc: mean(folds.iter().filter_map(|r| r.auc)),
        mean_detection_rate: mean(folds.iter().filter_map(|r| r.detection_rate)),
        folds,
    })
}

/// Accuracy of a detector trained on the row kind and tested on the column
/// kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationMatrix {
    pub kinds: Vec<AttackKind>,
    pub accuracy: Vec<Vec<f64>>,
}

impl GeneralizationMatrix {
    pub fn get(&self, train: AttackKind, test: AttackKind) -> Option<f64> {
        let r = self.kinds.iter().position(|&k| k == train)?;
        let c = self.kinds.iter().position(|&k| k == test)?;
        Some(self.accuracy[r][c])
    }

    /// Header row of kind names, then one row per training kind.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for k in &self.kinds {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        for (k, row) in self.kinds.iter().zip(&self.accuracy) {
            out.push_str(k.name());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one detector per kind on its full dataset and tests it on every
/// other kind's dataset. Diagonal entries instead train on a stratified 80%
/// of the dataset and test on the remaining 20%.
pub fn generalization_matrix(
    datasets: &BTreeMap<AttackKind, DetectionDataset>,
    params: &SvmParams,
    seed: u64,
) -> Result<GeneralizationMatrix> {
    if let Some(missing) = AttackKind::ALL.iter().find(|k| !datasets.contains_key(k)) {
        return Err(Error::Parameter(format!("no detection dataset for {missing}")));
    }
    let kinds = AttackKind::ALL.to_vec();
    let mut accuracy = vec![vec![0.0; kinds.len()]; kinds.len()];
    for (r, train_kind) in kinds.iter().enumerate() {
        let train = &datasets[train_kind];
        let full = svm_train(&sorted_subset(train, (0..train.len()).collect()), params)?;
        for (c, test_kind) in kinds.iter().enumerate() {
            accuracy[r][c] = if r == c {
                let fold = stratified_folds(train, 5, seed)?;
                train_and_test(train, &fold, 0, params)?.0.accuracy
            } else {
                let test = &datasets[test_kind];
                evaluate_metrics(&score_all(&full, test)?, &test.labels())?.accuracy
            };
        }
    }
    Ok(GeneralizationMatrix { kinds, accuracy })
}
