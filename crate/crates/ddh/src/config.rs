//! Flat `key=value` configuration files with documented defaults.
//! Command-line flags override file values; unknown keys are rejected.

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::losses::{HashingDistance, LossConfig};
use crate::nn::OptMethod;
use crate::objective::DistillSwitches;
use crate::pipeline::{TrainConfig, DEFAULT_INPUT_SIZE, DEFAULT_ITERATIONS};
use std::path::Path;

/// Experiment settings: the flat mirror of the training, loss, and
/// split configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub iterations: u64,
    pub learning_rate: f64,
    pub optimizer: OptMethod,
    pub batch_classes: usize,
    pub batch_per_class: usize,
    pub margin: f64,
    pub quant_weight: f64,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub hashing_distance: HashingDistance,
    pub rela_squared: bool,
    pub rela_mean: bool,
    pub enable_dir: bool,
    pub enable_rela: bool,
    pub enable_hard: bool,
    pub enable_hinton: bool,
    pub train_fraction: f64,
    pub image_size: usize,
    pub log_every: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: 0.001,
            optimizer: OptMethod::Adam,
            batch_classes: 8,
            batch_per_class: 4,
            margin: 180.0,
            quant_weight: 0.01,
            alpha: 1.0,
            beta: 0.8,
            temperature: 4.0,
            hashing_distance: HashingDistance::Squared,
            rela_squared: false,
            rela_mean: false,
            enable_dir: false,
            enable_rela: true,
            enable_hard: true,
            enable_hinton: false,
            train_fraction: 0.5,
            image_size: DEFAULT_INPUT_SIZE,
            log_every: 50,
        }
    }
}

/// Keys accepted in config files, with their defaults.
pub const CONFIG_KEYS: &str = "\
seed=0                   rng seed for init, splits, and batches
iterations=2000          training steps
learning_rate=0.001      optimizer step size
optimizer=adam           adam | sgd
batch_classes=8          classes per batch
batch_per_class=4        images per class per batch
margin=180               hashing-loss margin t
quant_weight=0.01        quantization weight w
alpha=1                  relative-loss weight
beta=0.8                 hard-loss weight
temperature=4            soft-label temperature
hashing_distance=squared squared | euclidean
rela_squared=false       square the relative-loss gap
rela_mean=false          average the relative loss over pairs
enable_dir=false         direct distillation term
enable_rela=true         relative distillation term
enable_hard=true         hard-pair distillation term
enable_hinton=false      soft-label baseline term
train_fraction=0.5       per-class train split fraction
image_size=32            square input resolution
log_every=50             loss-sample interval";

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl Settings {
    /// Sets one key; unknown keys are a config error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptMethod::Adam,
                    "sgd" => OptMethod::Sgd,
                    other => {
                        return Err(Error::Config(format!(
                            "optimizer: expected adam or sgd, got {other:?}"
                        )))
                    }
                }
            }
            "batch_classes" => self.batch_classes = parse_num(key, value)?,
            "batch_per_class" => self.batch_per_class = parse_num(key, value)?,
            "margin" => self.margin = parse_num(key, value)?,
            "quant_weight" => self.quant_weight = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "temperature" => self.temperature = parse_num(key, value)?,
            "hashing_distance" => {
                self.hashing_distance = match value {
                    "squared" => HashingDistance::Squared,
                    "euclidean" => HashingDistance::Euclidean,
                    other => {
                        return Err(Error::Config(format!(
                            "hashing_distance: expected squared or euclidean, got {other:?}"
                        )))
                    }
                }
            }
            "rela_squared" => self.rela_squared = parse_bool(key, value)?,
            "rela_mean" => self.rela_mean = parse_bool(key, value)?,
            "enable_dir" => self.enable_dir = parse_bool(key, value)?,
            "enable_rela" => self.enable_rela = parse_bool(key, value)?,
            "enable_hard" => self.enable_hard = parse_bool(key, value)?,
            "enable_hinton" => self.enable_hinton = parse_bool(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "image_size" => self.image_size = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file over the current values. Blank lines
    /// and `#` comments are skipped.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{} line {}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            quant_weight: self.quant_weight,
            alpha: self.alpha,
            beta: self.beta,
            temperature: self.temperature,
            hashing_distance: self.hashing_distance,
            rela_squared: self.rela_squared,
            rela_mean: self.rela_mean,
        }
    }

    pub fn switches(&self) -> DistillSwitches {
        DistillSwitches {
            direct: self.enable_dir,
            relative: self.enable_rela,
            hard: self.enable_hard,
            hinton: self.enable_hinton,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::for_input(self.image_size);
        cfg.loss = self.loss_config();
        cfg.optimizer = self.optimizer;
        cfg.learning_rate = self.learning_rate;
        cfg.iterations = self.iterations;
        cfg.batch_classes = self.batch_classes;
        cfg.batch_per_class = self.batch_per_class;
        cfg.seed = self.seed;
        cfg.switches = self.switches();
        cfg.log_every = self.log_every.max(1);
        cfg
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# comment\nseed=9\nalpha = 0.5\n\noptimizer=sgd\n").unwrap();
        let mut s = Settings::default();
        s.apply_file(&p).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.alpha, 0.5);
        assert_eq!(s.optimizer, OptMethod::Sgd);
        // untouched keys keep defaults
        assert_eq!(s.beta, 0.8);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut s = Settings::default();
        let err = s.set("learning_rte", "0.1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("learning_rte"));
    }

    #[test]
    fn malformed_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        std::fs::write(&p, "just some words\n").unwrap();
        assert!(Settings::default().apply_file(&p).is_err());
    }

    #[test]
    fn every_documented_key_parses() {
        let mut s = Settings::default();
        for line in CONFIG_KEYS.lines() {
            let assignment = line.split_whitespace().next().unwrap();
            let (key, value) = assignment.split_once('=').unwrap();
            s.set(key, value).unwrap();
        }
    }

    #[test]
    fn train_config_mirrors_settings() {
        let mut s = Settings::default();
        s.set("image_size", "16").unwrap();
        s.set("iterations", "77").unwrap();
        s.set("enable_rela", "false").unwrap();
        let cfg = s.train_config();
        assert_eq!(cfg.input_size(), 16);
        assert_eq!(cfg.iterations, 77);
        assert!(!cfg.switches.relative);
        assert!(cfg.switches.hard);
    }
}
