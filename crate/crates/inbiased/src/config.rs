//! Training configuration, loadable from TOML.
//!
//! Unknown keys are rejected with the offending key named, so typos in
//! config files fail fast instead of silently using defaults.

use crate::augment::Augmentation;
use crate::data::{DatasetName, DatasetSpec};
use crate::error::{Error, Result};
use crate::losses::AlignmentWeights;
use crate::models::Arch;
use crate::nn::Scheduler;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Learning-rate schedule named in a config; bound to the epoch count at
/// training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SchedulerConfig {
    #[default]
    Cosine,
    Multistep {
        milestones: Vec<usize>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Constant,
}

fn default_gamma() -> f64 {
    0.1
}

impl SchedulerConfig {
    pub fn build(&self, total_epochs: usize) -> Scheduler {
        match self {
            SchedulerConfig::Cosine => Scheduler::Cosine { total_epochs },
            SchedulerConfig::Multistep { milestones, gamma } => Scheduler::MultiStep {
                milestones: milestones.clone(),
                gamma: *gamma,
            },
            SchedulerConfig::Constant => Scheduler::Constant,
        }
    }
}

fn default_batch_size() -> usize {
    128
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub arch: Arch,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub weights: AlignmentWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augmentation: Augmentation,
}

/// The learning rate used when a config does not set one: 0.01 for the
/// colored-digit (MLP) datasets, 0.1 elsewhere.
pub fn recommended_lr(dataset: DatasetName) -> f64 {
    match dataset {
        DatasetName::Mnist
        | DatasetName::ColoredMnistFg
        | DatasetName::ColoredMnistBg
        | DatasetName::ColoredMnistFgbg
        | DatasetName::SynthDigits
        | DatasetName::ColoredDigitsFg
        | DatasetName::ColoredDigitsBg
        | DatasetName::ColoredDigitsFgbg => 0.01,
        _ => 0.1,
    }
}

/// The alignment weights known to work well per dataset family.
pub fn recommended_weights(dataset: DatasetName) -> AlignmentWeights {
    match dataset {
        DatasetName::ColoredMnistFg
        | DatasetName::ColoredMnistBg
        | DatasetName::ColoredMnistFgbg
        | DatasetName::ColoredDigitsFg
        | DatasetName::ColoredDigitsBg
        | DatasetName::ColoredDigitsFgbg => AlignmentWeights {
            lambda_rgb: 50.0,
            lambda_shape: 1.0,
            gamma_rgb: 1.0,
            gamma_shape: 50.0,
        },
        DatasetName::TintedStl10 | DatasetName::TintedShapes => AlignmentWeights {
            lambda_rgb: 5.0,
            lambda_shape: 1.0,
            gamma_rgb: 1.0,
            gamma_shape: 5.0,
        },
        _ => AlignmentWeights::default(),
    }
}

impl TrainConfig {
    /// A config pre-filled with the dataset-appropriate learning rate and
    /// alignment weights.
    pub fn recommended(dataset: DatasetSpec, arch: Arch, epochs: usize) -> Self {
        let lr = recommended_lr(dataset.name);
        let weights = recommended_weights(dataset.name);
        Self {
            dataset,
            arch,
            epochs,
            batch_size: default_batch_size(),
            lr,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            scheduler: SchedulerConfig::default(),
            weights,
            seed: 0,
            augmentation: Augmentation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let SchedulerConfig::Multistep { milestones, gamma } = &self.scheduler {
            if !milestones.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(
                    "multistep milestones must be strictly increasing".into(),
                ));
            }
            if !(gamma > &0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!(
                    "multistep gamma must be > 0, got {gamma}"
                )));
            }
        }
        self.weights.validate()?;
        Ok(())
    }

    /// Parse and validate a TOML config file.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Config(format!("cannot read config file {}", path.display())))?;
        let cfg: TrainConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize to TOML (for `--dry-run` echoes and config scaffolding).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn demo() -> TrainConfig {
        TrainConfig::recommended(
            DatasetSpec::new(DatasetName::ColoredDigitsFg, Split::Train, 1),
            Arch::Mlp,
            3,
        )
    }

    #[test]
    fn recommended_defaults_follow_dataset() {
        let cfg = demo();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.weights.lambda_rgb, 50.0);
        let stl = TrainConfig::recommended(
            DatasetSpec::new(DatasetName::TintedShapes, Split::Train, 1),
            Arch::Resnet18Cifar,
            3,
        );
        assert_eq!(stl.lr, 0.1);
        assert_eq!(stl.weights.lambda_rgb, 5.0);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = demo();
        let text = cfg.to_toml().unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = r#"
            arch = "mlp"
            epochs = 3
            learning_rate = 0.5
            [dataset]
            name = "colored_digits_fg"
            split = "train"
        "#;
        let err = toml::from_str::<TrainConfig>(text).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"
            arch = "mlp"
            epochs = 2
            [dataset]
            name = "synth_digits"
            split = "train"
        "#;
        let cfg: TrainConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.scheduler, SchedulerConfig::Cosine);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = demo();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = demo();
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = demo();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = demo();
        cfg.scheduler = SchedulerConfig::Multistep {
            milestones: vec![5, 5],
            gamma: 0.1,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn multistep_scheduler_binds_epochs() {
        let sched = SchedulerConfig::Multistep {
            milestones: vec![2, 4],
            gamma: 0.5,
        }
        .build(6);
        assert_eq!(sched.lr(1.0, 0), 1.0);
        assert_eq!(sched.lr(1.0, 2), 0.5);
        assert_eq!(sched.lr(1.0, 4), 0.25);
    }
}
