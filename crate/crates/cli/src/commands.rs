//! The three pipeline stages. Each one loads and checks every input, computes
//! all results in memory and only then writes its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use mismatch_core::attacks::{evaluate_attack, AttackSummary};
use mismatch_core::data::{channel_stats, load_cifar10, load_mnist_idx, sample_subset};
use mismatch_core::detector::{
    build_detection_dataset, generalization_matrix, kfold_cv, read_csv, CvReport, GeneralizationMatrix, Provenance,
};
use mismatch_core::nn::{checkpoint_load, encode_checkpoint, evaluate_accuracy, train_sgd, EpochStats};
use mismatch_core::seed::{self, component};
use mismatch_core::{AttackKind, Dataset, DetectionDataset, Network};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetName, ExperimentConfig, ModelSettings};
use crate::failure::{CliError, Context};

pub const MODEL_FILES: [&str; 2] = ["model1.ckpt", "model2.ckpt"];

pub fn dataset_csv(kind: AttackKind) -> PathBuf {
    PathBuf::from("datasets").join(format!("{}.csv", kind.name()))
}

fn dataset_sidecar(kind: AttackKind) -> PathBuf {
    PathBuf::from("datasets").join(format!("{}.json", kind.name()))
}

/// Stable per-kind index, independent of which kinds are configured.
fn kind_index(kind: AttackKind) -> u64 {
    AttackKind::ALL.iter().position(|&k| k == kind).expect("kind is listed") as u64
}

fn require_files(paths: &[PathBuf]) -> Result<(), CliError> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Core {
            context: "missing input files".into(),
            source: mismatch_core::Error::Data(missing.join(", ")),
        })
    }
}

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits, CliError> {
    let dir = &cfg.data_dir;
    match cfg.dataset {
        DatasetName::Mnist => {
            let f = |n: &str| dir.join(n);
            let files = [
                f("train-images-idx3-ubyte"),
                f("train-labels-idx1-ubyte"),
                f("t10k-images-idx3-ubyte"),
                f("t10k-labels-idx1-ubyte"),
            ];
            require_files(&files)?;
            let train = load_mnist_idx(&files[0], &files[1]).context(|| "loading MNIST training set".into())?;
            let test = load_mnist_idx(&files[2], &files[3]).context(|| "loading MNIST test set".into())?;
            Ok(Splits { train, test })
        }
        DatasetName::Cifar10Small => {
            let train_files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            let test_files = vec![dir.join("test_batch.bin")];
            require_files(&train_files)?;
            require_files(&test_files)?;
            let train = load_cifar10(&train_files).context(|| "loading CIFAR-10 training batches".into())?;
            let test = load_cifar10(&test_files).context(|| "loading CIFAR-10 test batch".into())?;
            Ok(Splits { train, test })
        }
    }
}

/// Files produced by one command, held in memory until everything
/// succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: BTreeMap<String, String>,
    outputs: Vec<OutputRecord>,
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core {
        context: "writing outputs".into(),
        source: mismatch_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

impl Outputs {
    fn add(&mut self, rel: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((rel.into(), bytes.into()));
    }

    fn add_json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
        text.push('\n');
        self.add(rel, text);
    }

    /// Writes every file under `out_dir`, then a manifest naming them.
    fn commit(self, cfg: &ExperimentConfig, command: &str) -> Result<Vec<PathBuf>, CliError> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.result_entries().into_iter().collect(),
            outputs: self
                .files
                .iter()
                .map(|(p, b)| OutputRecord {
                    path: p.display().to_string(),
                    sha256: hex_sha256(b),
                })
                .collect(),
        };
        let mut written = vec![];
        for (rel, bytes) in &self.files {
            let path = cfg.out_dir.join(rel);
            write_atomic(&path, bytes)?;
            written.push(path);
        }
        let path = cfg.out_dir.join(format!("manifest-{command}.json"));
        let mut text = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(written)
    }
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(vec![]);
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: Network,
    pub test_accuracy: f64,
    pub history: Vec<EpochStats>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub models: [TrainedModel; 2],
    pub written: Vec<PathBuf>,
}

fn train_one(
    name: &str,
    settings: &ModelSettings,
    component_seed: u64,
    normalize: Option<(Vec<f32>, Vec<f32>)>,
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
) -> Result<TrainedModel, CliError> {
    let start = Instant::now();
    let net = settings
        .arch
        .build(normalize, seed::mix(component_seed, 0))
        .context(|| format!("building {name}"))?;
    let mut tc = settings.train.clone();
    tc.seed = component_seed;
    info!("training {name} ({}) on {} images for {} epochs", settings.arch.id(), train.len(), tc.epochs);
    let (net, history) = train_sgd(net, train, valid, &tc).context(|| format!("training {name}"))?;
    for h in &history {
        info!(
            "{name} epoch {}: loss {:.4}, validation accuracy {:.4}",
            h.epoch + 1,
            h.train_loss,
            h.valid_accuracy
        );
    }
    let test_accuracy = evaluate_accuracy(&net, test).context(|| format!("testing {name}"))?;
    let seconds = start.elapsed().as_secs_f64();
    info!("{name} test accuracy {test_accuracy:.4} after {seconds:.0} s");
    if test_accuracy < settings.min_accuracy {
        warn!(
            "{name} test accuracy {test_accuracy:.4} is below the configured floor {}",
            settings.min_accuracy
        );
    }
    Ok(TrainedModel {
        net,
        test_accuracy,
        history,
        seconds,
    })
}

/// Trains both models and writes their checkpoints, test accuracies and
/// per-epoch history.
/// The images both models are fit on, and the held-out validation tail.
fn training_split(cfg: &ExperimentConfig, full: &Dataset) -> Result<(Dataset, Dataset), CliError> {
    let (mut train, valid) = full
        .split_tail(cfg.validation_size)
        .context(|| "holding out the validation set".into())?;
    if cfg.train_subset > 0 {
        train = sample_subset(&train, cfg.train_subset, component(cfg.seed, seed::SUBSET))
            .context(|| "drawing the training subset".into())?;
    }
    Ok((train, valid))
}

pub fn train_models(cfg: &ExperimentConfig) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let (train, valid) = training_split(cfg, &data.train)?;
    let normalize = if cfg.normalize {
        let stats = channel_stats(&train).context(|| "channel statistics".into())?;
        Some(stats.into_iter().unzip())
    } else {
        None
    };
    let m1 = train_one(
        "model1",
        &cfg.model1,
        component(cfg.seed, seed::MODEL1),
        normalize.clone(),
        &train,
        &valid,
        &data.test,
    )?;
    let m2 = train_one(
        "model2",
        &cfg.model2,
        component(cfg.seed, seed::MODEL2),
        normalize,
        &train,
        &valid,
        &data.test,
    )?;

    let mut out = Outputs::default();
    let models = [m1, m2];
    let settings = [&cfg.model1, &cfg.model2];
    let mut acc_rows = vec![];
    let mut hist_rows = vec![];
    for (i, (m, s)) in models.iter().zip(settings).enumerate() {
        out.add(MODEL_FILES[i], encode_checkpoint(&m.net));
        let name = format!("model{}", i + 1);
        acc_rows.push(vec![
            name.clone(),
            s.arch.id().to_string(),
            format!("{:.6}", m.test_accuracy),
            s.min_accuracy.to_string(),
        ]);
        for h in &m.history {
            hist_rows.push(vec![
                name.clone(),
                (h.epoch + 1).to_string(),
                h.learning_rate.to_string(),
                format!("{:.6}", h.train_loss),
                format!("{:.6}", h.valid_accuracy),
            ]);
        }
    }
    out.add(
        "accuracy.csv",
        table(&["model", "architecture", "test_accuracy", "min_accuracy"], acc_rows),
    );
    out.add(
        "training_history.csv",
        table(
            &["model", "epoch", "learning_rate", "train_loss", "valid_accuracy"],
            hist_rows,
        ),
    );
    let written = out.commit(cfg, "train-models")?;
    Ok(TrainReport { models, written })
}

pub fn load_models(cfg: &ExperimentConfig) -> Result<(Network, Network), CliError> {
    let paths: Vec<PathBuf> = MODEL_FILES.iter().map(|f| cfg.out_dir.join(f)).collect();
    require_files(&paths)?;
    let m1 = checkpoint_load(&paths[0]).context(|| "loading model1".into())?;
    let m2 = checkpoint_load(&paths[1]).context(|| "loading model2".into())?;
    for (name, m) in [("model1", &m1), ("model2", &m2)] {
        let expected = match cfg.dataset {
            DatasetName::Mnist => [1, 28, 28],
            DatasetName::Cifar10Small => [3, 32, 32],
        };
        if m.input_shape() != expected {
            return Err(CliError::Core {
                context: format!("{name} does not fit {}", cfg.dataset),
                source: mismatch_core::Error::InputShape {
                    expected: expected.to_vec(),
                    actual: m.input_shape().to_vec(),
                },
            });
        }
    }
    Ok((m1, m2))
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSidecar {
    pub provenance: Provenance,
    pub samples: usize,
    pub attacks: usize,
    pub attack_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub summaries: Vec<AttackSummary>,
    pub datasets: BTreeMap<AttackKind, DetectionDataset>,
    /// Wall time per kind for the summary sample and the dataset.
    pub seconds: BTreeMap<AttackKind, (f64, f64)>,
    pub written: Vec<PathBuf>,
}

/// Attacks the evaluation sample for the distortion summary and builds one
/// detection dataset per configured kind over a shared image pool.
pub fn build_attack_datasets(cfg: &ExperimentConfig) -> Result<AttackReport, CliError> {
    cfg.validate()?;
    let (m1, m2) = load_models(cfg)?;
    let data = load_data(cfg)?;
    let pool_seed = component(cfg.seed, seed::POOL);
    let (train, _) = training_split(cfg, &data.train)?;
    let pool = sample_subset(&train, cfg.pool_size, pool_seed).context(|| "drawing the image pool".into())?;
    let eval_seed = component(cfg.seed, seed::EVAL_SAMPLE);
    let sample =
        sample_subset(&data.test, cfg.eval_size, eval_seed).context(|| "drawing the evaluation sample".into())?;
    let schedule = cfg.schedule.schedule();
    let detection_seed = component(cfg.seed, seed::DETECTION);

    let mut summaries = vec![];
    let mut datasets = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for &kind in &cfg.attacks {
        let idx = kind_index(kind);
        let start = Instant::now();
        let summary = evaluate_attack(&m1, &sample, kind, &schedule, seed::mix(eval_seed, idx))
            .context(|| format!("attacking the evaluation sample with {kind}"))?;
        let t_summary = start.elapsed().as_secs_f64();
        info!(
            "{kind}: success {:.4} over {} images, mean MSE {} ({t_summary:.0} s)",
            summary.success_rate,
            summary.attempted,
            opt(summary.mean_mse)
        );
        let start = Instant::now();
        let d = build_detection_dataset(&m1, &m2, &pool, kind, &schedule, seed::mix(detection_seed, idx))
            .context(|| format!("building the {kind} detection dataset"))?;
        let t_dataset = start.elapsed().as_secs_f64();
        info!(
            "{kind}: dataset of {} samples, attack fraction {:.4} ({t_dataset:.0} s)",
            d.len(),
            d.attack_fraction()
        );
        summaries.push(summary);
        datasets.insert(kind, d);
        seconds.insert(kind, (t_summary, t_dataset));
    }

    let mut out = Outputs::default();
    for (kind, d) in &datasets {
        out.add(dataset_csv(*kind), mismatch_core::detector::encode_csv(d));
        out.add_json(
            dataset_sidecar(*kind),
            &DatasetSidecar {
                provenance: d.provenance.clone(),
                samples: d.len(),
                attacks: d.samples.iter().filter(|s| s.label == 1).count(),
                attack_fraction: d.attack_fraction(),
            },
        );
    }
    let rows = summaries
        .iter()
        .map(|s| {
            vec![
                s.kind.name().to_string(),
                s.images.to_string(),
                s.attempted.to_string(),
                s.flipped.to_string(),
                s.already_misclassified.to_string(),
                s.exhausted.to_string(),
                format!("{:.6}", s.success_rate),
                s.mean_mse.map_or(String::new(), |v| format!("{v:.8}")),
            ]
        })
        .collect();
    out.add(
        "attack_summary.csv",
        table(
            &[
                "kind",
                "images",
                "attempted",
                "flipped",
                "already_misclassified",
                "exhausted",
                "success_rate",
                "mean_mse",
            ],
            rows,
        ),
    );
    out.add_json("attack_summary.json", &summaries);
    let written = out.commit(cfg, "build-attack-datasets")?;
    Ok(AttackReport {
        summaries,
        datasets,
        seconds,
        written,
    })
}

fn read_dataset(cfg: &ExperimentConfig, kind: AttackKind) -> Result<DetectionDataset, CliError> {
    let path = cfg.out_dir.join(dataset_csv(kind));
    let provenance = Provenance {
        name: format!("{}-{}", cfg.dataset, kind),
        kind,
        seed: seed::mix(component(cfg.seed, seed::DETECTION), kind_index(kind)),
    };
    let d = read_csv(&path, provenance).context(|| format!("reading the {kind} dataset"))?;
    let data_err = |msg: String| CliError::Core {
        context: format!("checking {}", path.display()),
        source: mismatch_core::Error::Data(msg),
    };
    if d.is_empty() {
        return Err(data_err("no samples".into()));
    }
    if d.samples.iter().any(|s| s.kind.is_some_and(|k| k != kind)) {
        return Err(data_err(format!("rows of another attack kind than {kind}")));
    }
    let dim = d.feature_dim().unwrap_or(0);
    if let Some(i) = d.samples.iter().position(|s| !s.features.is_valid(1e-4)) {
        return Err(data_err(format!("row {} is not a pair of distributions", i + 1)));
    }
    if d.samples.iter().any(|s| s.features.len() != dim) {
        return Err(data_err("feature width varies".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub cv: BTreeMap<AttackKind, CvReport>,
    pub matrix: Option<GeneralizationMatrix>,
    /// Wall time of the k-fold run per kind.
    pub seconds: BTreeMap<AttackKind, f64>,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct DetectionJson<'a> {
    folds: usize,
    results: BTreeMap<&'a str, &'a CvReport>,
}

/// K-fold evaluation per kind and, when all seven kinds are configured,
/// the cross-kind generalization matrix.
pub fn evaluate_detectors(cfg: &ExperimentConfig) -> Result<DetectionReport, CliError> {
    cfg.validate()?;
    let datasets = cfg
        .attacks
        .iter()
        .map(|&k| read_dataset(cfg, k).map(|d| (k, d)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let fold_seed = component(cfg.seed, seed::FOLDS);
    let mut cv = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for (&kind, d) in &datasets {
        let start = Instant::now();
        let r = kfold_cv(d, cfg.folds, &cfg.svm, fold_seed).context(|| format!("cross-validating {kind}"))?;
        let t = start.elapsed().as_secs_f64();
        info!(
            "{kind}: accuracy {:.4}, F1 {:.4}, AUC {}, detection rate {} ({t:.0} s)",
            r.mean_accuracy,
            r.mean_f1,
            opt(r.mean_auc),
            opt(r.mean_detection_rate)
        );
        if r.unconverged > 0 {
            warn!("{kind}: SVM hit the iteration cap in {} of {} folds", r.unconverged, cfg.folds);
        }
        cv.insert(kind, r);
        seconds.insert(kind, t);
    }
    let matrix = if datasets.len() == AttackKind::ALL.len() {
        let m = generalization_matrix(&datasets, &cfg.svm, component(cfg.seed, seed::GENERALIZATION))
            .context(|| "generalization matrix".into())?;
        Some(m)
    } else {
        info!("skipping the generalization matrix: it needs all seven attack kinds");
        None
    };

    let mut out = Outputs::default();
    let rows = cv
        .iter()
        .map(|(kind, r)| {
            let d = &datasets[kind];
            vec![
                kind.name().to_string(),
                d.len().to_string(),
                format!("{:.6}", d.attack_fraction()),
                format!("{:.6}", r.mean_accuracy),
                format!("{:.6}", r.mean_f1),
                opt(r.mean_auc),
                opt(r.mean_detection_rate),
            ]
        })
        .collect();
    out.add(
        "detection.csv",
        table(
            &["kind", "samples", "attack_fraction", "accuracy", "f1", "auc", "detection_rate"],
            rows,
        ),
    );
    out.add_json(
        "detection.json",
        &DetectionJson {
            folds: cfg.folds,
            results: cv.iter().map(|(k, r)| (k.name(), r)).collect(),
        },
    );
    if let Some(m) = &matrix {
        out.add("generalization.csv", m.to_csv());
        out.add_json("generalization.json", m);
    }
    let written = out.commit(cfg, "evaluate-detectors")?;
    Ok(DetectionReport {
        cv,
        matrix,
        seconds,
        written,
    })
}
