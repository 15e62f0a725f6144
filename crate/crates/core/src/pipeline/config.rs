use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributor::FitDistance;
use crate::diffcore::DistanceKind;
use crate::distiller::{DistillConfig, Mode};
use crate::error::{Error, Result};
use crate::nets::{Activation, Architecture, InitScheme, ModelSpec};
use crate::trainer::{FinetuneConfig, Reduction, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files (optionally gzipped). Relative paths resolve against the config file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// `label,p0,p1,...` rows with 0..255 pixels.
    Csv {
        train: PathBuf,
        test: PathBuf,
        image_shape: Vec<usize>,
        class_count: usize,
    },
    /// Gaussian blobs; the first `per_class` samples of every class train,
    /// the next `test_per_class` test.
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionConfig {
    LabelFlip { fraction: f64 },
    /// Uniform noise of L∞ norm `norm`, clamped to `[0, 1]`.
    PixelNoise { fraction: f64, norm: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    RawPixels,
    /// Penultimate activations of the untrained model.
    InitModel,
}

fn raw() -> FeatureSource {
    FeatureSource::RawPixels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    pub per_class: usize,
    #[serde(default = "raw")]
    pub features: FeatureSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub activation: Activation,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp { hidden: vec![128, 64] },
            activation: Activation::Relu,
            init: InitScheme::Kaiming,
        }
    }
}

fn batch64() -> usize {
    64
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr_net: f64,
    pub epochs: usize,
    #[serde(default = "batch64")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub checkpoint_stride: usize,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub lr_img: f64,
    pub steps: usize,
    pub step_len: usize,
    pub dist: DistanceKind,
    pub mode: Mode,
    pub augment: bool,
    pub ipc: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            lr_img: d.lr_img,
            steps: d.steps,
            step_len: d.step_len,
            dist: d.dist,
            mode: d.mode,
            augment: d.augment,
            ipc: d.ipc,
        }
    }
}

fn twenty() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    /// `|P_t|`; defaults to `K`.
    #[serde(default)]
    pub masks: Option<usize>,
    #[serde(default = "l2")]
    pub fit: FitDistance,
    /// Test samples to attribute, taken from the start of the test split.
    #[serde(default = "twenty")]
    pub queries: usize,
    /// Two-level search over a class-level and a cluster-level synset.
    #[serde(default)]
    pub hierarchical: bool,
}

fn l2() -> FitDistance {
    FitDistance::L2
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            masks: None,
            fit: FitDistance::L2,
            queries: 20,
            hierarchical: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Validation samples, taken from the end of the test split.
    pub validation: usize,
    pub percentages: Vec<f64>,
    pub random_trials: usize,
    /// Clusters whose exact oracle is also used for the fidelity table.
    pub fidelity_clusters: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            validation: 0,
            percentages: vec![0.0, 10.0, 20.0, 50.0],
            random_trials: 3,
            fidelity_clusters: 4,
        }
    }
}

/// The whole pipeline in one versioned JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionConfig>,
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    /// Defaults to `τ` epochs at `lr_net`, each cluster's synset weighted as one group.
    #[serde(default)]
    pub finetune: Option<FinetuneConfig>,
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        if let Some(base) = origin.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::InvalidArgument(format!("config file {} does not exist", path.display())));
        }
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetConfig::Csv { train, test, .. } => {
                fix(train);
                fix(test);
            }
            DatasetConfig::Blobs { .. } => {}
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.clustering.per_class == 0 {
            return Err(Error::Config("clustering.per_class must be >= 1".into()));
        }
        self.train_config().validate()?;
        self.distill_config().validate()?;
        let ft = self.finetune_config();
        if !(ft.lr >= 0.0 && ft.lr.is_finite()) {
            return Err(Error::Config(format!("finetune.lr must be finite and >= 0, got {}", ft.lr)));
        }
        if self.attribution.queries == 0 {
            return Err(Error::Config("attribution.queries must be >= 1".into()));
        }
        if let Some(c) = self.corruption {
            let f = match c {
                CorruptionConfig::LabelFlip { fraction } | CorruptionConfig::PixelNoise { fraction, .. } => fraction,
            };
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("corruption fraction must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_net: self.train.lr_net,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            checkpoint_stride: self.train.checkpoint_stride,
            seed: self.seed,
            shuffle: self.train.shuffle,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            lr_img: d.lr_img,
            steps: d.steps,
            step_len: d.step_len,
            dist: d.dist,
            mode: d.mode,
            augment: d.augment,
            ipc: d.ipc,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        self.finetune.clone().unwrap_or(FinetuneConfig {
            epochs: self.train.epochs,
            lr: self.train.lr_net,
            reduction: Reduction::SumPerGroup {
                per_group: self.distill.ipc,
            },
        })
    }

    pub fn model_spec(&self, input_shape: Vec<usize>, num_classes: usize) -> ModelSpec {
        ModelSpec {
            architecture: self.model.architecture.clone(),
            activation: self.model.activation,
            num_classes,
            input_shape,
            init: self.model.init,
            seed: self.seed,
        }
    }
}
