use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ChannelOrder, PreprocessConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::net::{Architecture, InitScheme};
use crate::optim::TrainConfig;
use crate::probe::{ProbeKind, ProbeOptions};
use crate::surgery::Preset;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// CSV manifest; relative paths resolve against the config file's directory.
    pub manifest: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading a manifest.
    pub synthetic: Option<SynthConfig>,
    pub k: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub resize_to: Option<usize>,
    pub crop: Option<usize>,
    /// Fixed channel means; when absent they are computed from each fold's training images.
    pub mean: Option<[f32; 3]>,
    pub scale: Option<f32>,
    pub channel_order: Option<ChannelOrder>,
}

/// Every field optional: explicit values win over preset defaults, which win over built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub base_lr: Option<f64>,
    pub step_epochs: Option<usize>,
    pub gamma: Option<f64>,
    pub epochs: Option<usize>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub stop_at_train_accuracy: Option<f64>,
}

impl TrainSection {
    /// Resolves against `preset_lr` (from a surgery preset) and the built-in defaults.
    pub fn resolve(&self, preset_lr: Option<f64>, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            base_lr: self.base_lr.or(preset_lr).unwrap_or(d.base_lr),
            step_epochs: self.step_epochs.unwrap_or(d.step_epochs),
            gamma: self.gamma.unwrap_or(d.gamma),
            epochs: self.epochs.unwrap_or(d.epochs),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed,
            stop_at_train_accuracy: self.stop_at_train_accuracy,
        }
    }

    /// Names of hyperparameters left at their built-in defaults.
    pub fn defaulted(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.momentum.is_none() {
            out.push("momentum");
        }
        if self.weight_decay.is_none() {
            out.push("weight_decay");
        }
        if self.batch_size.is_none() {
            out.push("batch_size");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    #[default]
    Finetune,
    Surgery,
    Probe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Average class probabilities over views.
    #[default]
    PostSoftmax,
    /// Average raw class scores over views.
    PreSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Surgery preset; `finetune` experiments always use the `finetune` preset.
    pub preset: Option<Preset>,
    /// Used when no pretrained checkpoint is given or it carries no embedded network.
    pub architecture: Architecture,
    /// Output width of a freshly built source network.
    pub source_classes: usize,
    pub pretrained: Option<PathBuf>,
    /// Weight scheme when no pretrained checkpoint is given.
    pub init: InitScheme,
    pub oversample: bool,
    pub fusion: Fusion,
    /// Record held-out accuracy after every epoch (history only; never used for decisions).
    pub track_val: bool,
    pub probe: ProbeOptions,
    pub probe_kinds: Vec<ProbeKind>,
    /// Probe endpoints; empty means every CONV/POOL/NORM/FC layer.
    pub endpoints: Vec<String>,
    /// Label used for this run in reports; defaults to the preset name or `probe`.
    pub name: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::Finetune,
            preset: None,
            architecture: Architecture::Reference,
            source_classes: 1000,
            pretrained: None,
            init: InitScheme::Gaussian,
            oversample: true,
            fusion: Fusion::PostSoftmax,
            track_val: false,
            probe: ProbeOptions::default(),
            probe_kinds: ProbeKind::ALL.to_vec(),
            endpoints: Vec::new(),
            name: None,
        }
    }
}

impl ExperimentSection {
    pub fn preset(&self) -> Result<Option<Preset>> {
        match self.kind {
            ExperimentKind::Finetune => Ok(Some(Preset::Finetune)),
            ExperimentKind::Surgery => self
                .preset
                .map(Some)
                .ok_or_else(|| Error::Config("surgery experiments need experiment.preset".into())),
            ExperimentKind::Probe => Ok(None),
        }
    }

    pub fn row_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.kind {
            ExperimentKind::Probe => "probe".into(),
            _ => self.preset().ok().flatten().unwrap_or(Preset::Finetune).name().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub synthetic: SynthConfig,
    pub architecture: Architecture,
    pub init: InitScheme,
    pub train: TrainSection,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            synthetic: SynthConfig::task_a(5000, 72, 0),
            architecture: Architecture::Small,
            init: InitScheme::FanIn,
            train: TrainSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Fresh layer weights (surgery and random initialization).
    pub init: u64,
    /// Shuffling and augmentation.
    pub train: u64,
    /// Fold assignment when the manifest has none.
    pub folds: u64,
    /// Inner cross-validation of probes.
    pub probe: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            init: seed,
            train: seed,
            folds: seed,
            probe: seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
    pub pretrain: PretrainSection,
    pub seeds: Seeds,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.dataset.manifest);
        fix(&mut cfg.experiment.pretrained);
        Ok(cfg)
    }

    pub fn k(&self) -> usize {
        self.dataset.k.unwrap_or(5)
    }

    /// Preprocessing with the configured fields; `mean` is filled in per fold unless fixed.
    pub fn preprocess(&self) -> PreprocessConfig {
        let d = PreprocessConfig::default();
        let p = &self.preprocess;
        PreprocessConfig {
            resize_to: p.resize_to.unwrap_or(d.resize_to),
            crop: p.crop.unwrap_or(d.crop),
            mean: p.mean.unwrap_or(d.mean),
            scale: p.scale.unwrap_or(d.scale),
            channel_order: p.channel_order.unwrap_or(d.channel_order),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() < 2 {
            return Err(Error::Config("dataset.k must be at least 2".into()));
        }
        self.preprocess().validate()?;
        self.train.resolve(None, 0).validate()?;
        self.experiment.preset()?;
        self.experiment.probe.validate()?;
        if self.experiment.source_classes == 0 {
            return Err(Error::Config("experiment.source_classes must be positive".into()));
        }
        if let Some(s) = &self.dataset.synthetic {
            s.validate()?;
            if s.patterns.len() != 2 {
                return Err(Error::Config("dataset.synthetic must have exactly two patterns".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c.k(), 5);
        assert_eq!(c.train.resolve(None, 3), TrainConfig { seed: 3, ..TrainConfig::default() });
        assert_eq!(c.preprocess(), PreprocessConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn explicit_lr_beats_preset() {
        let t = TrainSection {
            base_lr: Some(0.01),
            ..Default::default()
        };
        assert_eq!(t.resolve(Some(0.0001), 0).base_lr, 0.01);
        assert_eq!(TrainSection::default().resolve(Some(0.0001), 0).base_lr, 0.0001);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"train": {"lr": 1}}"#),
            Err(Error::Config(_))
        ));
        let c = ExperimentConfig::from_json(r#"{"experiment": {"kind": "surgery", "preset": "fc6-2"}}"#).unwrap();
        assert_eq!(c.experiment.preset().unwrap(), Some(Preset::Fc6x2));
        assert!(ExperimentConfig::from_json(r#"{"experiment": {"preset": "fc5-1"}}"#).is_err());
        let missing = ExperimentConfig::from_json(r#"{"experiment": {"kind": "surgery"}}"#).unwrap();
        assert!(missing.validate().is_err());
    }
}
