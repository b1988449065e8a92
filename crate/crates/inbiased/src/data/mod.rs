//! Dataset construction and ingestion.
//!
//! Two families of datasets are available. File-backed loaders read
//! standard on-disk formats (MNIST IDX, CIFAR binary, STL-10 binary,
//! TinyImageNet and CelebA layouts, generic class-per-folder trees) from
//! a data root; they never download anything. Bundled generators produce
//! procedural digit and shape corpora entirely from a seed, so the full
//! experiment pipeline runs on machines with no datasets installed. The
//! color-shortcut constructions (label-correlated foreground/background
//! coloring and class tinting) apply to either family.
//!
//! The data root is resolved from, in order: `DatasetSpec::root`, the
//! `INBIASED_DATA_ROOT` environment variable, then `./data`.

pub mod celeba;
pub mod cifar;
pub mod colored;
pub mod folder;
pub mod idx;
pub mod manifest;
pub mod palette;
pub mod stl;
pub mod synth;
pub mod tiny;
pub mod tinted;

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use colored::ColorScheme;
use palette::ColorPalette;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;

/// Environment variable naming the default dataset root directory.
pub const DATA_ROOT_ENV: &str = "INBIASED_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train or test)"
            ))),
        }
    }
}

/// Every dataset the factory can produce. The `colored_mnist_*`,
/// `stl10`-based, `cifar*`, `tinyimagenet`, and `skewed_celeba` entries
/// read files under the data root; the `*_digits` and `*_shapes` entries
/// are bundled procedural corpora generated from the seed alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    ColoredMnistFg,
    ColoredMnistBg,
    ColoredMnistFgbg,
    Stl10,
    TintedStl10,
    Cifar10,
    Cifar100,
    Tinyimagenet,
    SkewedCeleba,
    Folder,
    SynthDigits,
    ColoredDigitsFg,
    ColoredDigitsBg,
    ColoredDigitsFgbg,
    SynthShapes,
    TintedShapes,
}

impl DatasetName {
    pub const ALL: [DatasetName; 17] = [
        DatasetName::Mnist,
        DatasetName::ColoredMnistFg,
        DatasetName::ColoredMnistBg,
        DatasetName::ColoredMnistFgbg,
        DatasetName::Stl10,
        DatasetName::TintedStl10,
        DatasetName::Cifar10,
        DatasetName::Cifar100,
        DatasetName::Tinyimagenet,
        DatasetName::SkewedCeleba,
        DatasetName::Folder,
        DatasetName::SynthDigits,
        DatasetName::ColoredDigitsFg,
        DatasetName::ColoredDigitsBg,
        DatasetName::ColoredDigitsFgbg,
        DatasetName::SynthShapes,
        DatasetName::TintedShapes,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::ColoredMnistFg => "colored_mnist_fg",
            DatasetName::ColoredMnistBg => "colored_mnist_bg",
            DatasetName::ColoredMnistFgbg => "colored_mnist_fgbg",
            DatasetName::Stl10 => "stl10",
            DatasetName::TintedStl10 => "tinted_stl10",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
            DatasetName::Tinyimagenet => "tinyimagenet",
            DatasetName::SkewedCeleba => "skewed_celeba",
            DatasetName::Folder => "folder",
            DatasetName::SynthDigits => "synth_digits",
            DatasetName::ColoredDigitsFg => "colored_digits_fg",
            DatasetName::ColoredDigitsBg => "colored_digits_bg",
            DatasetName::ColoredDigitsFgbg => "colored_digits_fgbg",
            DatasetName::SynthShapes => "synth_shapes",
            DatasetName::TintedShapes => "tinted_shapes",
        }
    }
}

impl FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = DatasetName::ALL.iter().map(|n| n.as_str()).collect();
                Error::Config(format!(
                    "unknown dataset '{s}' (known: {})",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full description of a dataset request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub split: Split,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Truncate (file-backed) or size (generated) the sample stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tint_alpha: Option<f64>,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, split: Split, seed: u64) -> Self {
        Self {
            name,
            split,
            seed,
            root: None,
            count: None,
            tint_alpha: None,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = Some(count);
        self
    }

    /// The directory file-backed datasets are read from.
    pub fn resolved_root(&self) -> PathBuf {
        if let Some(r) = &self.root {
            return r.clone();
        }
        if let Ok(env_root) = std::env::var(DATA_ROOT_ENV) {
            if !env_root.is_empty() {
                return PathBuf::from(env_root);
            }
        }
        PathBuf::from("data")
    }
}

/// Default sample counts for the generated corpora when `count` is
/// unset.
fn default_count(split: Split) -> usize {
    match split {
        Split::Train => 10_000,
        Split::Test => 2_000,
    }
}

fn replicate_gray(batch: ImageBatch) -> Result<ImageBatch> {
    let (c, h, w) = batch.sample_shape();
    if c != 1 {
        return Ok(batch);
    }
    let n = batch.len();
    let mut images = ndarray::Array4::<f32>::zeros((n, 3, h, w));
    for i in 0..n {
        let src = batch.images.index_axis(ndarray::Axis(0), i);
        for ch in 0..3 {
            images
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), ch)
                .assign(&src.index_axis(ndarray::Axis(0), 0));
        }
    }
    let out = ImageBatch::new(images, batch.labels, batch.num_classes)?;
    match batch.groups {
        Some(g) => out.with_groups(g),
        None => Ok(out),
    }
}

/// Load the dataset described by `spec`.
pub fn load(spec: &DatasetSpec) -> Result<ImageBatch> {
    let root = spec.resolved_root();
    let split = spec.split;
    let seed = spec.seed;
    let count = spec.count;
    let palette = ColorPalette::from_seed(seed);
    let alpha = spec.tint_alpha.unwrap_or(tinted::DEFAULT_TINT_ALPHA);
    let gen_count = count.unwrap_or_else(|| default_count(split));
    match spec.name {
        DatasetName::Mnist => idx::load_mnist(&root, split, count),
        DatasetName::ColoredMnistFg
        | DatasetName::ColoredMnistBg
        | DatasetName::ColoredMnistFgbg => {
            let (planes, labels) = idx::load_mnist_planes(&root, split, count)?;
            let scheme = match spec.name {
                DatasetName::ColoredMnistFg => ColorScheme::Foreground,
                DatasetName::ColoredMnistBg => ColorScheme::Background,
                _ => ColorScheme::Both,
            };
            colored::colorize_planes(&planes, labels, seed, split, scheme, &palette)
        }
        DatasetName::Stl10 => stl::load_stl10(&root, split, count),
        DatasetName::TintedStl10 => {
            let base = stl::load_stl10(&root, split, count)?;
            match split {
                Split::Train => tinted::tint_batch(base, &palette, alpha),
                Split::Test => Ok(base), // tint is train-only
            }
        }
        DatasetName::Cifar10 => cifar::load_cifar10(&root, split, count),
        DatasetName::Cifar100 => cifar::load_cifar100(&root, split, count),
        DatasetName::Tinyimagenet => tiny::load_tinyimagenet(&root, split, count),
        DatasetName::SkewedCeleba => celeba::load_skewed_celeba(&root, split, count),
        DatasetName::Folder => folder::load_folder(&root, count),
        DatasetName::SynthDigits => synth::digit_batch(gen_count, seed, split.as_str()),
        DatasetName::ColoredDigitsFg => {
            colored::colored_digit_batch(gen_count, seed, split, ColorScheme::Foreground, &palette)
        }
        DatasetName::ColoredDigitsBg => {
            colored::colored_digit_batch(gen_count, seed, split, ColorScheme::Background, &palette)
        }
        DatasetName::ColoredDigitsFgbg => {
            colored::colored_digit_batch(gen_count, seed, split, ColorScheme::Both, &palette)
        }
        DatasetName::SynthShapes => synth::shape_batch(gen_count, seed, split.as_str()),
        DatasetName::TintedShapes => {
            let base = synth::shape_batch(gen_count, seed, split.as_str())?;
            match split {
                Split::Train => tinted::tint_batch(base, &palette, alpha),
                Split::Test => Ok(base), // tint is train-only
            }
        }
    }
}

/// Load a dataset and replicate grayscale to three channels (the input
/// convention of the convolutional models).
pub fn load_rgb(spec: &DatasetSpec) -> Result<ImageBatch> {
    load(spec).and_then(replicate_gray)
}

/// True if this dataset needs no files on disk.
pub fn is_generated(name: DatasetName) -> bool {
    matches!(
        name,
        DatasetName::SynthDigits
            | DatasetName::ColoredDigitsFg
            | DatasetName::ColoredDigitsBg
            | DatasetName::ColoredDigitsFgbg
            | DatasetName::SynthShapes
            | DatasetName::TintedShapes
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_names_round_trip() {
        for name in DatasetName::ALL {
            assert_eq!(name.as_str().parse::<DatasetName>().unwrap(), name);
        }
        assert!("imagenet".parse::<DatasetName>().is_err());
    }

    #[test]
    fn generated_datasets_need_no_root() {
        for name in DatasetName::ALL.into_iter().filter(|&n| is_generated(n)) {
            let spec = DatasetSpec::new(name, Split::Test, 3).with_count(4);
            let batch = load(&spec).unwrap();
            assert_eq!(batch.len(), 4);
        }
    }

    #[test]
    fn tinted_shapes_test_split_is_raw() {
        let tinted = DatasetSpec::new(DatasetName::TintedShapes, Split::Test, 5).with_count(6);
        let raw = DatasetSpec::new(DatasetName::SynthShapes, Split::Test, 5).with_count(6);
        assert_eq!(load(&tinted).unwrap().images, load(&raw).unwrap().images);
    }

    #[test]
    fn tinted_shapes_train_split_differs_from_raw() {
        let tinted = DatasetSpec::new(DatasetName::TintedShapes, Split::Train, 5).with_count(6);
        let raw = DatasetSpec::new(DatasetName::SynthShapes, Split::Train, 5).with_count(6);
        assert_ne!(load(&tinted).unwrap().images, load(&raw).unwrap().images);
    }

    #[test]
    fn root_resolution_prefers_explicit_then_env() {
        let mut spec = DatasetSpec::new(DatasetName::Mnist, Split::Train, 0);
        spec.root = Some(PathBuf::from("/explicit"));
        assert_eq!(spec.resolved_root(), PathBuf::from("/explicit"));
        spec.root = None;
        std::env::set_var(DATA_ROOT_ENV, "/from-env");
        assert_eq!(spec.resolved_root(), PathBuf::from("/from-env"));
        std::env::remove_var(DATA_ROOT_ENV);
        assert_eq!(spec.resolved_root(), PathBuf::from("data"));
    }

    #[test]
    fn spec_serializes_compactly() {
        let spec = DatasetSpec::new(DatasetName::ColoredDigitsFg, Split::Train, 7);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("colored_digits_fg"));
        assert!(!json.contains("root"));
        let back: DatasetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
