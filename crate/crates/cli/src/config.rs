//! Flat `key = value` experiment configuration.
//!
//! Values are layered: built-in defaults for the chosen dataset, then the
//! config file, then `MISMATCH_SEED`, then `--key value` flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mismatch_core::detector::Gamma;
use mismatch_core::{Architecture, AttackKind, BudgetSchedule, SvmParams, TrainConfig};
use sha2::{Digest, Sha256};

use crate::failure::CliError;

pub const SEED_ENV: &str = "MISMATCH_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    Mnist,
    Cifar10Small,
}

impl DatasetName {
    pub fn id(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10Small => "cifar10-small",
        }
    }

    pub fn image_width(self) -> usize {
        match self {
            Self::Mnist => 28,
            Self::Cifar10Small => 32,
        }
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10-small" => Ok(Self::Cifar10Small),
            _ => Err(format!("unknown dataset '{s}' (expected mnist or cifar10-small)")),
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub arch: Architecture,
    /// The seed field is ignored; model seeds derive from the master seed.
    pub train: TrainConfig,
    /// Test accuracy below this only triggers a warning.
    pub min_accuracy: f64,
}

/// Linear budget grids `max·i/steps` for `i = 1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSettings {
    pub fgsm_steps: usize,
    pub fgsm_max: f64,
    pub igsm_steps: usize,
    pub igsm_max: f64,
    pub igsm_iters: usize,
    pub jsma_steps: usize,
    pub jsma_max_fraction: f64,
    pub jsma_theta: f32,
    pub deepfool_iters: usize,
    pub deepfool_overshoot: f32,
    pub blur_steps: usize,
    pub blur_max: f64,
    pub noise_steps: usize,
    pub noise_max: f64,
    pub salt_pepper_steps: usize,
    pub salt_pepper_max: f64,
}

fn grid(steps: usize, max: f64) -> Vec<f64> {
    (1..=steps).map(|i| max * i as f64 / steps as f64).collect()
}

impl ScheduleSettings {
    fn standard(width: usize) -> Self {
        Self {
            fgsm_steps: 100,
            fgsm_max: 1.0,
            igsm_steps: 100,
            igsm_max: 1.0,
            igsm_iters: 10,
            jsma_steps: 10,
            jsma_max_fraction: 0.1,
            jsma_theta: 1.0,
            deepfool_iters: 50,
            deepfool_overshoot: 0.02,
            blur_steps: 50,
            blur_max: width as f64 / 4.0,
            noise_steps: 50,
            noise_max: 1.0,
            salt_pepper_steps: 50,
            salt_pepper_max: 1.0,
        }
    }

    pub fn schedule(&self) -> BudgetSchedule {
        BudgetSchedule {
            fgsm: grid(self.fgsm_steps, self.fgsm_max),
            igsm: grid(self.igsm_steps, self.igsm_max),
            igsm_iters: self.igsm_iters,
            jsma: grid(self.jsma_steps, self.jsma_max_fraction),
            jsma_theta: self.jsma_theta,
            deepfool_iters: self.deepfool_iters,
            deepfool_overshoot: self.deepfool_overshoot,
            blur: grid(self.blur_steps, self.blur_max),
            noise: grid(self.noise_steps, self.noise_max),
            salt_pepper: grid(self.salt_pepper_steps, self.salt_pepper_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Prepend a frozen per-channel standardization layer to both models.
    pub normalize: bool,
    /// Tail of the training partition held out for plateau detection.
    pub validation_size: usize,
    /// Seeded subset of the remaining training images; 0 keeps all.
    pub train_subset: usize,
    pub model1: ModelSettings,
    pub model2: ModelSettings,
    pub attacks: Vec<AttackKind>,
    pub schedule: ScheduleSettings,
    pub svm: SvmParams,
    pub pool_size: usize,
    pub eval_size: usize,
    pub folds: usize,
}

impl ExperimentConfig {
    pub fn defaults(dataset: DatasetName) -> Self {
        let schedule = ScheduleSettings::standard(dataset.image_width());
        let svm = SvmParams::default();
        match dataset {
            DatasetName::Mnist => Self {
                dataset,
                data_dir: "data/mnist".into(),
                out_dir: "runs/mnist".into(),
                seed: 0,
                normalize: true,
                validation_size: 5000,
                train_subset: 0,
                model1: ModelSettings {
                    arch: Architecture::MnistCnn,
                    train: TrainConfig::mnist(0),
                    min_accuracy: 0.96,
                },
                model2: ModelSettings {
                    arch: Architecture::MnistMlp,
                    train: TrainConfig::mnist(0),
                    min_accuracy: 0.95,
                },
                attacks: AttackKind::ALL.to_vec(),
                schedule,
                svm,
                pool_size: 10_000,
                eval_size: 500,
                folds: 10,
            },
            DatasetName::Cifar10Small => Self {
                dataset,
                data_dir: "data/cifar10".into(),
                out_dir: "runs/cifar10-small".into(),
                seed: 0,
                normalize: true,
                validation_size: 5000,
                train_subset: 10_000,
                model1: ModelSettings {
                    arch: Architecture::CifarSmallA,
                    train: TrainConfig::cifar_small(0),
                    min_accuracy: 0.60,
                },
                model2: ModelSettings {
                    arch: Architecture::CifarSmallB,
                    train: TrainConfig::cifar_small(0),
                    min_accuracy: 0.60,
                },
                attacks: vec![AttackKind::Fgsm, AttackKind::Igsm],
                schedule,
                svm,
                pool_size: 10_000,
                eval_size: 500,
                folds: 10,
            },
        }
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("dataset".into(), self.dataset.to_string()),
            ("data_dir".into(), self.data_dir.display().to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("normalize".into(), self.normalize.to_string()),
            ("validation_size".into(), self.validation_size.to_string()),
            ("train_subset".into(), self.train_subset.to_string()),
        ];
        for (prefix, m) in [("model1", &self.model1), ("model2", &self.model2)] {
            let t = &m.train;
            for (k, v) in [
                ("arch", m.arch.id().to_string()),
                ("epochs", t.epochs.to_string()),
                ("learning_rate", t.learning_rate.to_string()),
                ("batch_size", t.batch_size.to_string()),
                ("momentum", t.momentum.to_string()),
                ("weight_decay", t.weight_decay.to_string()),
                ("lr_decay_factor", t.lr_decay_factor.to_string()),
                ("lr_patience", t.lr_patience.to_string()),
                ("min_accuracy", m.min_accuracy.to_string()),
            ] {
                out.push((format!("{prefix}_{k}"), v));
            }
        }
        let names: Vec<&str> = self.attacks.iter().map(|k| k.name()).collect();
        out.push(("attacks".into(), names.join(",")));
        let s = &self.schedule;
        for (k, v) in [
            ("fgsm_steps", s.fgsm_steps.to_string()),
            ("fgsm_max", s.fgsm_max.to_string()),
            ("igsm_steps", s.igsm_steps.to_string()),
            ("igsm_max", s.igsm_max.to_string()),
            ("igsm_iters", s.igsm_iters.to_string()),
            ("jsma_steps", s.jsma_steps.to_string()),
            ("jsma_max_fraction", s.jsma_max_fraction.to_string()),
            ("jsma_theta", s.jsma_theta.to_string()),
            ("deepfool_iters", s.deepfool_iters.to_string()),
            ("deepfool_overshoot", s.deepfool_overshoot.to_string()),
            ("blur_steps", s.blur_steps.to_string()),
            ("blur_max", s.blur_max.to_string()),
            ("noise_steps", s.noise_steps.to_string()),
            ("noise_max", s.noise_max.to_string()),
            ("salt_pepper_steps", s.salt_pepper_steps.to_string()),
            ("salt_pepper_max", s.salt_pepper_max.to_string()),
        ] {
            out.push((k.into(), v));
        }
        let gamma = match self.svm.gamma {
            Gamma::Auto => "auto".to_string(),
            Gamma::Value(g) => g.to_string(),
        };
        for (k, v) in [
            ("svm_c", self.svm.c.to_string()),
            ("svm_gamma", gamma),
            ("svm_tolerance", self.svm.tolerance.to_string()),
            ("svm_max_passes", self.svm.max_passes.to_string()),
            ("svm_cache_mb", (self.svm.cache_bytes >> 20).to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("eval_size", self.eval_size.to_string()),
            ("folds", self.folds.to_string()),
        ] {
            out.push((k.into(), v));
        }
        out
    }

    /// Every entry except `out_dir`, which does not affect any result.
    pub fn result_entries(&self) -> Vec<(String, String)> {
        self.entries().into_iter().filter(|(k, _)| k != "out_dir").collect()
    }

    /// Canonical `key=value` lines, one per key.
    pub fn canonical_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of the `key=value` lines of [`Self::result_entries`].
    pub fn hash(&self) -> String {
        let text: String = self.result_entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if let Some((prefix, rest)) = key.split_once('_') {
            let model = match prefix {
                "model1" => Some(&mut self.model1),
                "model2" => Some(&mut self.model2),
                _ => None,
            };
            if let Some(m) = model {
                return set_model(m, rest, value).map_err(|e| format!("{key}: {e}"));
            }
        }
        let s = &mut self.schedule;
        let r = match key {
            "dataset" => {
                let d: DatasetName = value.parse()?;
                if d != self.dataset {
                    return Err("dataset can only be chosen before other keys are applied".into());
                }
                Ok(())
            }
            "data_dir" => {
                self.data_dir = value.into();
                Ok(())
            }
            "out_dir" => {
                self.out_dir = value.into();
                Ok(())
            }
            "seed" => parse(value).map(|v| self.seed = v),
            "normalize" => parse(value).map(|v| self.normalize = v),
            "validation_size" => parse(value).map(|v| self.validation_size = v),
            "train_subset" => parse(value).map(|v| self.train_subset = v),
            "attacks" => parse_kinds(value).map(|v| self.attacks = v),
            "fgsm_steps" => parse(value).map(|v| s.fgsm_steps = v),
            "fgsm_max" => parse(value).map(|v| s.fgsm_max = v),
            "igsm_steps" => parse(value).map(|v| s.igsm_steps = v),
            "igsm_max" => parse(value).map(|v| s.igsm_max = v),
            "igsm_iters" => parse(value).map(|v| s.igsm_iters = v),
            "jsma_steps" => parse(value).map(|v| s.jsma_steps = v),
            "jsma_max_fraction" => parse(value).map(|v| s.jsma_max_fraction = v),
            "jsma_theta" => parse(value).map(|v| s.jsma_theta = v),
            "deepfool_iters" => parse(value).map(|v| s.deepfool_iters = v),
            "deepfool_overshoot" => parse(value).map(|v| s.deepfool_overshoot = v),
            "blur_steps" => parse(value).map(|v| s.blur_steps = v),
            "blur_max" => parse(value).map(|v| s.blur_max = v),
            "noise_steps" => parse(value).map(|v| s.noise_steps = v),
            "noise_max" => parse(value).map(|v| s.noise_max = v),
            "salt_pepper_steps" => parse(value).map(|v| s.salt_pepper_steps = v),
            "salt_pepper_max" => parse(value).map(|v| s.salt_pepper_max = v),
            "svm_c" => parse(value).map(|v| self.svm.c = v),
            "svm_gamma" => {
                if value == "auto" {
                    self.svm.gamma = Gamma::Auto;
                    Ok(())
                } else {
                    parse(value).map(|v| self.svm.gamma = Gamma::Value(v))
                }
            }
            "svm_tolerance" => parse(value).map(|v| self.svm.tolerance = v),
            "svm_max_passes" => parse(value).map(|v| self.svm.max_passes = v),
            "svm_cache_mb" => parse::<usize>(value).map(|v| self.svm.cache_bytes = v << 20),
            "pool_size" => parse(value).map(|v| self.pool_size = v),
            "eval_size" => parse(value).map(|v| self.eval_size = v),
            "folds" => parse(value).map(|v| self.folds = v),
            _ => return Err(format!("unknown key '{key}'")),
        };
        r.map_err(|e| format!("{key}: {e}"))
    }

    /// Checks value ranges that do not need the data on disk.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::usage(m));
        for (name, m) in [("model1", &self.model1), ("model2", &self.model2)] {
            if m.arch.input_shape()[0] != self.dataset_channels() {
                return bad(format!("{name}_arch {} does not fit {}", m.arch.id(), self.dataset));
            }
            if m.train.validate().is_err() || m.train.epochs == 0 {
                return bad(format!("{name} training settings are invalid: {:?}", m.train));
            }
        }
        if self.attacks.is_empty() {
            return bad("attacks must name at least one kind".into());
        }
        if let Err(e) = self.schedule.schedule().validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.svm.validate() {
            return bad(e.to_string());
        }
        if self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        if self.eval_size == 0 {
            return bad("eval_size must be positive".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if self.validation_size == 0 {
            return bad("validation_size must be positive".into());
        }
        Ok(())
    }

    fn dataset_channels(&self) -> usize {
        match self.dataset {
            DatasetName::Mnist => 1,
            DatasetName::Cifar10Small => 3,
        }
    }

    /// Layers the sources over the dataset defaults.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[String],
    ) -> Result<Self, CliError> {
        let file_pairs = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config_text(&text, path)?
            }
            None => vec![],
        };
        let flag_pairs = parse_overrides(overrides)?;
        let dataset = flag_pairs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .chain(file_pairs.iter().map(|(_, k, v)| (k.as_str(), v.as_str())))
            .find(|(k, _)| *k == "dataset")
            .map_or(Ok(DatasetName::Mnist), |(_, v)| v.parse().map_err(CliError::Usage))?;
        let mut cfg = Self::defaults(dataset);
        for (line, k, v) in &file_pairs {
            cfg.set(k, v).map_err(|message| CliError::ConfigLine {
                path: file.expect("pairs come from a file").to_path_buf(),
                line: *line,
                message,
            })?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed)
                .map_err(|e| CliError::usage(format!("{SEED_ENV}: {e}")))?;
        }
        for (k, v) in &flag_pairs {
            cfg.set(k, v).map_err(|e| CliError::usage(format!("--{k}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_model(m: &mut ModelSettings, key: &str, value: &str) -> Result<(), String> {
    let t = &mut m.train;
    match key {
        "arch" => Architecture::from_id(value).map(|a| m.arch = a).map_err(|e| e.to_string()),
        "epochs" => parse(value).map(|v| t.epochs = v),
        "learning_rate" => parse(value).map(|v| t.learning_rate = v),
        "batch_size" => parse(value).map(|v| t.batch_size = v),
        "momentum" => parse(value).map(|v| t.momentum = v),
        "weight_decay" => parse(value).map(|v| t.weight_decay = v),
        "lr_decay_factor" => parse(value).map(|v| t.lr_decay_factor = v),
        "lr_patience" => parse(value).map(|v| t.lr_patience = v),
        "min_accuracy" => parse(value).map(|v| m.min_accuracy = v),
        _ => Err("unknown key".into()),
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("invalid value '{value}': {e}"))
}

fn parse_kinds(value: &str) -> Result<Vec<AttackKind>, String> {
    if value == "all" {
        return Ok(AttackKind::ALL.to_vec());
    }
    let mut kinds: Vec<AttackKind> = value
        .split(',')
        .map(|s| s.trim().parse::<AttackKind>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

/// `(line number, key, value)` triples. Blank lines and `#` comments are
/// skipped; a key may appear only once.
pub fn parse_config_text(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut pairs: Vec<(usize, String, String)> = vec![];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CliError::ConfigLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected key = value".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if pairs.iter().any(|(_, seen, _)| seen == k) {
            return Err(err(format!("duplicate key '{k}'")));
        }
        pairs.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

/// `--key value` or `--key=value` pairs; dashes in keys read as
/// underscores.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = vec![];
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::usage(format!("unexpected argument '{arg}'")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_match_the_standard_schedule() {
        for d in [DatasetName::Mnist, DatasetName::Cifar10Small] {
            let cfg = ExperimentConfig::defaults(d);
            assert_eq!(cfg.schedule.schedule(), BudgetSchedule::standard(d.image_width()));
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn every_entry_can_be_set_back() {
        for d in [DatasetName::Mnist, DatasetName::Cifar10Small] {
            let cfg = ExperimentConfig::defaults(d);
            let mut other = ExperimentConfig::defaults(d);
            for (k, v) in cfg.entries() {
                other.set(&k, &v).unwrap();
            }
            assert_eq!(other, cfg);
        }
    }

    #[test]
    fn config_text_parsing() {
        let p = Path::new("c.cfg");
        let pairs = parse_config_text("# header\n\nseed = 4 # trailing\nfolds=5\n", p).unwrap();
        assert_eq!(
            pairs,
            vec![(3, "seed".into(), "4".into()), (4, "folds".into(), "5".into())]
        );
        let dup = parse_config_text("seed=1\nseed=2\n", p).unwrap_err();
        assert!(matches!(dup, CliError::ConfigLine { line: 2, .. }));
        assert!(parse_config_text("novalue\n", p).is_err());
    }

    #[test]
    fn overrides_accept_both_spellings() {
        let args: Vec<String> = ["--pool-size", "7", "--seed=3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            parse_overrides(&args).unwrap(),
            vec![("pool_size".into(), "7".into()), ("seed".into(), "3".into())]
        );
        assert!(parse_overrides(&["--seed".to_string()]).is_err());
        assert!(parse_overrides(&["seed".to_string()]).is_err());
    }

    #[test]
    fn layering_order_is_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cfg");
        fs::write(&path, "seed = 1\nfolds = 4\nattacks = igsm, fgsm\n").unwrap();
        let cfg = ExperimentConfig::resolve(Some(&path), None, &[]).unwrap();
        assert_eq!((cfg.seed, cfg.folds), (1, 4));
        assert_eq!(cfg.attacks, vec![AttackKind::Fgsm, AttackKind::Igsm]);
        let cfg = ExperimentConfig::resolve(Some(&path), Some("2"), &[]).unwrap();
        assert_eq!(cfg.seed, 2);
        let flags = vec!["--seed".to_string(), "3".to_string()];
        let cfg = ExperimentConfig::resolve(Some(&path), Some("2"), &flags).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn dataset_selects_defaults() {
        let flags = vec!["--dataset".to_string(), "cifar10-small".to_string()];
        let cfg = ExperimentConfig::resolve(None, None, &flags).unwrap();
        assert_eq!(cfg.model1.arch, Architecture::CifarSmallA);
        assert_eq!(cfg.train_subset, 10_000);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let flag = |k: &str, v: &str| vec![format!("--{k}"), v.to_string()];
        for (k, v) in [
            ("pool_size", "0"),
            ("folds", "1"),
            ("seed", "-1"),
            ("attacks", "laser"),
            ("model1_arch", "cifar-small-a"),
            ("svm_c", "0"),
            ("salt_pepper_max", "1.5"),
            ("no_such_key", "1"),
            ("dataset", "imagenet"),
        ] {
            let err = ExperimentConfig::resolve(None, None, &flag(k, v)).unwrap_err();
            assert_eq!(err.exit_code(), crate::failure::ExitCode::Usage, "{k}");
        }
    }

    #[test]
    fn hash_tracks_every_value() {
        let a = ExperimentConfig::defaults(DatasetName::Mnist);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set("out_dir", "elsewhere").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("svm_gamma", "0.5").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
