//! Experiment configuration: a TOML document with one table per concern.
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::models::{BackboneKind, EncoderConfig, ModelKind};
use crate::train::{DaeTarget, OptimizerConfig, PretrainConfig, ProbeConfig, ProbeInput, ProbeMode, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub backbone: BackboneKind,
    pub d_hid: usize,
    pub w: f64,
    pub dae_target: DaeTarget,
    pub probe_input: ProbeInput,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Sidae,
            backbone: BackboneKind::Resnet18Cifar,
            d_hid: 2048,
            w: 0.5,
            dae_target: DaeTarget::Clean,
            probe_input: ProbeInput::Backbone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub num_classes: usize,
    /// Unlabeled pre-training images per class.
    pub pretrain_per_class: usize,
    /// Labeled training images per class (the pool the labeled fraction is drawn from).
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Generator seed, shared by every run.
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            num_classes: 4,
            pretrain_per_class: 128,
            train_per_class: 1000,
            test_per_class: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dataset: DatasetName,
    /// Dataset used for the downstream task; defaults to `dataset`.
    pub probe_dataset: Option<DatasetName>,
    pub root: PathBuf,
    pub labeled_fraction: f64,
    pub subset_seed: u64,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dataset: DatasetName::Cifar10,
            probe_dataset: None,
            root: PathBuf::from("data"),
            labeled_fraction: 1.0,
            subset_seed: 0,
            synthetic: SyntheticSection::default(),
        }
    }
}

impl DataSection {
    pub fn probe_dataset(&self) -> DatasetName {
        self.probe_dataset.unwrap_or(self.dataset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub checkpoint_interval: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let o = OptimizerConfig::pretrain_default();
        PretrainSection {
            lr0: o.lr0,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            epochs: o.epochs,
            schedule: o.schedule,
            checkpoint_interval: 25,
        }
    }
}

impl PretrainSection {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            schedule: self.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub mode: ProbeMode,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let o = OptimizerConfig::probe_default();
        ProbeSection {
            lr0: o.lr0,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            epochs: o.epochs,
            schedule: o.schedule,
            mode: ProbeMode::Frozen,
        }
    }
}

impl ProbeSection {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            schedule: self.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub seeds_parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: (0..5).collect(),
            out_dir: PathBuf::from("runs"),
            seeds_parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub augmentation: AugmentationConfig,
    pub pretrain: PretrainSection,
    pub probe: ProbeSection,
    pub run: RunSection,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub dataset: Option<DatasetName>,
    pub backbone: Option<BackboneKind>,
    pub w: Option<f64>,
    pub d_hid: Option<usize>,
    pub fraction: Option<f64>,
    pub mode: Option<ProbeMode>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub seeds_parallel: bool,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and resolves a config. When the file does not set
    /// `augmentation.blur.enabled`, blur follows the dataset default.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let blur_set = value
            .get("augmentation")
            .and_then(|a| a.get("blur"))
            .and_then(|b| b.get("enabled"))
            .is_some();
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !blur_set {
            cfg.augmentation.blur.enabled = AugmentationConfig::for_dataset(cfg.data.dataset.as_str()).blur.enabled;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Defaults with dataset-dependent fields resolved.
    pub fn resolved_default() -> Self {
        Self::from_toml_str("").expect("defaults are valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(k) = o.model {
            self.model.kind = k;
        }
        if let Some(d) = o.dataset {
            if d != self.data.dataset {
                self.augmentation.blur.enabled = AugmentationConfig::for_dataset(d.as_str()).blur.enabled;
            }
            self.data.dataset = d;
        }
        if let Some(b) = o.backbone {
            self.model.backbone = b;
        }
        if let Some(w) = o.w {
            self.model.w = w;
        }
        if let Some(d) = o.d_hid {
            self.model.d_hid = d;
        }
        if let Some(f) = o.fraction {
            self.data.labeled_fraction = f;
        }
        if let Some(m) = o.mode {
            self.probe.mode = m;
        }
        if let Some(e) = o.epochs {
            self.pretrain.epochs = e;
        }
        if let Some(s) = o.seed {
            self.run.seeds = vec![s];
        }
        if o.seeds_parallel {
            self.run.seeds_parallel = true;
        }
        if let Some(dir) = &o.out_dir {
            self.run.out_dir = dir.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder()?;
        if !(0.0..=1.0).contains(&self.model.w) {
            return Err(Error::Config(format!("model.w = {} not in [0, 1]", self.model.w)));
        }
        let f = self.data.labeled_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("data.labeled_fraction = {f} not in (0, 1]")));
        }
        if self.data.dataset == DatasetName::Synthetic || self.data.probe_dataset == Some(DatasetName::Synthetic) {
            let s = &self.data.synthetic;
            if s.num_classes < 2 || s.pretrain_per_class == 0 || s.train_per_class == 0 || s.test_per_class == 0 {
                return Err(Error::Config("data.synthetic needs ≥ 2 classes and non-empty splits".into()));
            }
        }
        self.augmentation.validate()?;
        self.pretrain.optimizer().validate("pretrain")?;
        self.probe.optimizer().validate("probe")?;
        if self.pretrain.checkpoint_interval == 0 {
            return Err(Error::Config("pretrain.checkpoint_interval must be positive".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        EncoderConfig::new(self.model.backbone, self.model.d_hid)
    }

    /// The loss weight a model kind effectively uses; `None` for supervised.
    pub fn effective_w(&self) -> Option<f64> {
        match self.model.kind {
            ModelKind::Simsiam => Some(0.0),
            ModelKind::Dae => Some(1.0),
            ModelKind::Sidae => Some(self.model.w),
            ModelKind::Supervised => None,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            optimizer: self.pretrain.optimizer(),
            w: self.effective_w().unwrap_or(0.0),
            dae_target: self.model.dae_target,
            checkpoint_interval: self.pretrain.checkpoint_interval,
            augmentation: self.augmentation.clone(),
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            optimizer: self.probe.optimizer(),
            mode: if self.model.kind == ModelKind::Supervised {
                ProbeMode::Finetune
            } else {
                self.probe.mode
            },
            input: self.model.probe_input,
        }
    }

    /// Directory name identifying the pre-training run.
    pub fn run_name(&self) -> String {
        let mut name = format!(
            "{}_{}_{}_d{}",
            self.model.kind.name(),
            self.data.dataset,
            self.model.backbone.name(),
            self.model.d_hid
        );
        if self.model.kind == ModelKind::Sidae {
            name.push_str(&format!("_w{}", self.model.w));
        }
        name
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.out_dir.join(self.run_name())
    }
}
