use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capsnet::{CapsNetConfig, MarginParams, TrainParams};
use crate::chain::AcceptanceRule;
use crate::ctnorm::{LungWindow, DEFAULT_SPACING_MM, STANDARD_EXTENT_MM};
use crate::error::{Error, Result};
use crate::feddp::FedConfig;

/// How the training pool is split across hospitals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// Shuffled, sizes differ by at most one.
    IidEqual,
    /// Shuffled, sizes proportional to the given ratios.
    SizeSkewed(Vec<f64>),
}

impl Default for PartitionScheme {
    fn default() -> Self {
        PartitionScheme::IidEqual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub n_hospitals: usize,
    pub rounds: usize,
    /// Provider counts to sweep; empty means `1..=n_hospitals`.
    pub providers: Vec<usize>,
    pub partition: PartitionScheme,
    /// Reports and ledgers are written here. Relative paths resolve
    /// against the config file.
    pub output_dir: PathBuf,
    /// Also train one model on the union of all partitions.
    pub centralized_baseline: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "fedchain".into(),
            seed: 0,
            n_hospitals: 3,
            rounds: 10,
            providers: Vec::new(),
            partition: PartitionScheme::IidEqual,
            output_dir: PathBuf::from("reports"),
            centralized_baseline: false,
        }
    }
}

/// Local training and model shape. Input size and front end come from
/// the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_primary: usize,
    pub primary_dim: usize,
    pub class_dim: usize,
    pub routing_iters: usize,
    /// Conv front end only.
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub margin: MarginParams,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            epochs: 2,
            learning_rate: 0.5,
            batch_size: 10,
            n_primary: 8,
            primary_dim: 4,
            class_dim: 4,
            routing_iters: 3,
            kernel: 5,
            stride: 3,
            channels: 8,
            margin: MarginParams::default(),
        }
    }
}

impl TrainerSection {
    pub fn train_params(&self) -> TrainParams {
        TrainParams { epochs: self.epochs, learning_rate: self.learning_rate, batch_size: self.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub category: String,
    pub acceptance: AcceptanceRule,
    pub genesis_timestamp: u64,
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection { category: "covid-ct".into(), acceptance: AcceptanceRule::default(), genesis_timestamp: 1_600_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Two Gaussian blobs with unit variance, means at `±separation` on
    /// every axis.
    Blobs {
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
        #[serde(flatten)]
        split: SplitSizes,
    },
    /// Square noisy images, class 1 carries a bright disc.
    Images {
        #[serde(default = "defaults::image_size")]
        size: usize,
        #[serde(flatten)]
        split: SplitSizes,
    },
    /// CT volumes listed in a `path,label` CSV. Volumes are resampled to
    /// `extent_mm / spacing_mm`, windowed and flattened.
    Ctv1 {
        manifest: PathBuf,
        #[serde(default)]
        window: LungWindow,
        #[serde(default = "defaults::extent")]
        extent_mm: [f64; 3],
        #[serde(default = "defaults::spacing")]
        spacing_mm: [f64; 3],
        #[serde(default = "defaults::holdout")]
        validation_fraction: f64,
        #[serde(default = "defaults::holdout")]
        test_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_holdout")]
    pub n_validation: usize,
    #[serde(default = "defaults::n_holdout")]
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { n_train: defaults::n_train(), n_validation: defaults::n_holdout(), n_test: defaults::n_holdout() }
    }
}

mod defaults {
    pub fn dim() -> usize {
        16
    }
    pub fn separation() -> f64 {
        0.75
    }
    pub fn image_size() -> usize {
        16
    }
    pub fn extent() -> [f64; 3] {
        super::STANDARD_EXTENT_MM
    }
    pub fn spacing() -> [f64; 3] {
        super::DEFAULT_SPACING_MM
    }
    pub fn holdout() -> f64 {
        0.2
    }
    pub fn n_train() -> usize {
        300
    }
    pub fn n_holdout() -> usize {
        100
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs { dim: defaults::dim(), separation: defaults::separation(), split: SplitSizes::default() }
    }
}

/// A whole experiment, usually read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub fed: FedConfig,
    pub trainer: TrainerSection,
    pub chain: ChainSection,
    pub dataset: DatasetSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format { what: "experiment config", detail: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.experiment.output_dir.is_relative() {
            self.experiment.output_dir = base.join(&self.experiment.output_dir);
        }
        if let DatasetSpec::Ctv1 { manifest, .. } = &mut self.dataset {
            if manifest.is_relative() {
                *manifest = base.join(&*manifest);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format { what: "experiment config", detail: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.n_hospitals == 0 {
            return Err(Error::invalid("n_hospitals must be at least 1"));
        }
        if e.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if let Some(p) = e.providers.iter().find(|&&p| p == 0 || p > e.n_hospitals) {
            return Err(Error::invalid(format!("provider count {p} outside 1..={}", e.n_hospitals)));
        }
        if let PartitionScheme::SizeSkewed(r) = &e.partition {
            if r.len() != e.n_hospitals || r.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid("size-skewed ratios need one positive entry per hospital"));
            }
        }
        self.fed.validate()?;
        let t = &self.trainer;
        if t.batch_size == 0 || !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::invalid("trainer needs a positive batch size and learning rate"));
        }
        t.margin.validate()?;
        let (AcceptanceRule::MedianMultiple(k) | AcceptanceRule::Fixed(k)) = self.chain.acceptance;
        if k.is_nan() {
            return Err(Error::invalid("acceptance threshold is NaN"));
        }
        match &self.dataset {
            DatasetSpec::Blobs { dim, separation, split } => {
                if *dim == 0 || !separation.is_finite() {
                    return Err(Error::invalid("blobs need dim ≥ 1 and a finite separation"));
                }
                split.validate()?;
            }
            DatasetSpec::Images { size, split } => {
                if *size < 4 {
                    return Err(Error::invalid("images must be at least 4 pixels wide"));
                }
                split.validate()?;
            }
            DatasetSpec::Ctv1 { window, validation_fraction, test_fraction, .. } => {
                window.validate()?;
                let ok = |f: f64| (0.0..1.0).contains(&f) && f > 0.0;
                if !ok(*validation_fraction) || !ok(*test_fraction) || validation_fraction + test_fraction >= 1.0 {
                    return Err(Error::invalid("holdout fractions must be in (0, 1) and sum below 1"));
                }
            }
        }
        Ok(())
    }

    /// Provider counts to run, in order.
    pub fn provider_counts(&self) -> Vec<usize> {
        if self.experiment.providers.is_empty() {
            (1..=self.experiment.n_hospitals).collect()
        } else {
            self.experiment.providers.clone()
        }
    }

    /// Model config for inputs of length `input_len` (flat) or, for
    /// images, a `size × size` single-channel grid.
    pub fn model_config(&self, input_len: usize) -> Result<CapsNetConfig> {
        let t = &self.trainer;
        let mut cfg = match &self.dataset {
            DatasetSpec::Images { size, .. } => {
                CapsNetConfig::conv(*size, *size, t.channels, t.kernel, t.stride, t.primary_dim, 2, t.class_dim)?
            }
            _ => CapsNetConfig::dense(input_len, t.n_primary, t.primary_dim, 2, t.class_dim),
        };
        cfg.routing_iters = t.routing_iters;
        cfg.margin = t.margin;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SplitSizes {
    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_validation == 0 || self.n_test == 0 {
            return Err(Error::invalid("train, validation and test sizes must all be positive"));
        }
        Ok(())
    }
}
