//! Declarative run configuration for the command-line tool.
//!
//! One TOML file describes a whole run: the dataset, the model path, and the
//! training or evaluation parameters. All randomness flows from the single
//! top-level `seed`. Individual keys can be overridden on the command line
//! with `--set key.path=value`, which keeps sweeps scriptable without
//! editing the experiment record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackSpace, Norm};
use crate::error::{Error, Result};
use crate::nn::init::WeightInit;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// CIFAR-10 binary directory (`data_batch_*.bin`, `test_batch.bin`).
    Cifar10 { path: PathBuf, split: Split },
    /// Deterministic synthetic blobs; seeded from the run seed.
    Synthetic {
        num_samples: usize,
        num_classes: usize,
        shape: [usize; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub path: PathBuf,
}

/// Training parameters; the run seed is used for initialization and
/// shuffling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_init: WeightInit,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub transform: TransformConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = crate::train::TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            weight_init: d.weight_init,
            lr_decay_factor: d.lr_decay_factor,
            lr_decay_epochs: d.lr_decay_epochs,
            transform: TransformConfig::Identity,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> crate::train::TrainConfig {
        crate::train::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            weight_init: self.weight_init,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
        }
    }
}

/// Pre-processing attached to the model at training time. Statistics are
/// computed from the training set and stored in the model file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransformConfig {
    #[default]
    Identity,
    /// Subtract the training-set mean image.
    MeanPixelSubtract,
    /// Standardize channels with training-set means and a fixed std.
    PerChannelNormalize { std: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub presets: Vec<String>,
    pub norm: Norm,
    /// Defaults to the conventional budget for the norm (8/255 or 0.5).
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_space")]
    pub space: AttackSpace,
    #[serde(default)]
    pub post_quantize: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub max_samples: Option<usize>,
}

fn default_space() -> AttackSpace {
    AttackSpace::InputSpace
}

fn default_batch_size() -> usize {
    128
}

impl RunConfig {
    /// Validation shared by all commands: referenced files must exist, and
    /// numeric fields must be sane. Field paths are reported verbatim.
    pub fn validate(&self, needs_model_file: bool) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Cifar10 { path, .. } => {
                if !path.is_dir() {
                    return Err(Error::config(
                        "dataset.path",
                        format!("directory {} does not exist", path.display()),
                    ));
                }
            }
            DatasetConfig::Synthetic { num_samples, num_classes, shape } => {
                if *num_classes == 0 || *num_samples < *num_classes {
                    return Err(Error::config(
                        "dataset.num_samples",
                        "need at least one sample per class",
                    ));
                }
                if shape.contains(&0) {
                    return Err(Error::config("dataset.shape", "extents must be positive"));
                }
            }
        }
        if needs_model_file {
            let model = self.model.as_ref().ok_or_else(|| {
                Error::config("model.path", "a [model] section with a path is required")
            })?;
            if !model.path.is_file() {
                return Err(Error::config(
                    "model.path",
                    format!("model file {} does not exist", model.path.display()),
                ));
            }
        }
        if let Some(eval) = &self.evaluate {
            if eval.presets.is_empty() {
                return Err(Error::config("evaluate.presets", "need at least one preset"));
            }
            for name in &eval.presets {
                crate::attack::lookup_preset(name)
                    .map_err(|_| Error::config("evaluate.presets", format!("unknown preset `{name}`")))?;
            }
            if let Some(e) = eval.epsilon {
                if !(e >= 0.0) || !e.is_finite() {
                    return Err(Error::config("evaluate.epsilon", "must be finite and >= 0"));
                }
            }
            if let Some(a) = eval.alpha {
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::config("evaluate.alpha", "must be finite and >= 0"));
                }
            }
            if eval.batch_size == 0 {
                return Err(Error::config("evaluate.batch_size", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Parse a config file and apply `--set key.path=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    if !path.is_file() {
        return Err(Error::config("config", format!("file {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::config("config", format!("TOML parse error: {e}")))?;
    let mut value = toml::Value::Table(table);
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    value
        .try_into()
        .map_err(|e| Error::config("config", format!("invalid configuration: {e}")))
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key_path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("`{spec}` is not key.path=value")))?;
    // Parse the right-hand side as a TOML literal; fall back to a string.
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = key_path.split('.').collect();
    let mut cursor = root;
    for (i, key) in keys.iter().enumerate() {
        let table = cursor.as_table_mut().ok_or_else(|| {
            Error::config("--set", format!("`{}` is not a table", keys[..i].join(".")))
        })?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("loop always returns on the last key");
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = r#"
seed = 7
output_dir = "out"

[dataset]
kind = "synthetic"
num_samples = 100
num_classes = 10
shape = [3, 8, 8]

[evaluate]
presets = ["FGSM", "BIM-10"]
norm = "linf"
"#;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let f = write_tmp(MINIMAL);
        let cfg = load_config(f.path(), &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        let eval = cfg.evaluate.as_ref().unwrap();
        assert_eq!(eval.batch_size, 128);
        assert_eq!(eval.space, AttackSpace::InputSpace);
        assert!(!eval.post_quantize);
        cfg.validate(false).unwrap();
    }

    #[test]
    fn set_overrides_replace_values() {
        let f = write_tmp(MINIMAL);
        let cfg = load_config(
            f.path(),
            &["seed=99".into(), "evaluate.batch_size=32".into(), "evaluate.norm=\"l2\"".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        let eval = cfg.evaluate.unwrap();
        assert_eq!(eval.batch_size, 32);
        assert_eq!(eval.norm, Norm::L2);
    }

    #[test]
    fn unknown_preset_is_rejected_with_field_path() {
        let f = write_tmp(MINIMAL);
        let cfg = load_config(f.path(), &["evaluate.presets=[\"NOPE\"]".into()]).unwrap();
        let err = cfg.validate(false).unwrap_err().to_string();
        assert!(err.contains("evaluate.presets"), "{err}");
    }

    #[test]
    fn missing_dataset_path_is_rejected() {
        let text = r#"
output_dir = "out"
[dataset]
kind = "cifar10"
path = "/definitely/not/here"
split = "test"
"#;
        let f = write_tmp(text);
        let cfg = load_config(f.path(), &[]).unwrap();
        let err = cfg.validate(false).unwrap_err().to_string();
        assert!(err.contains("dataset.path"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_tmp(&format!("{MINIMAL}\ntypo_key = 1\n"));
        assert!(load_config(f.path(), &[]).is_err());
    }
}
