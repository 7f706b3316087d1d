//! Experiment configuration: a single TOML document that pins everything
//! a run needs. Identical configs hash identically; any field change
//! yields a new hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kaizen_core::augment::AugmentPolicy;
use kaizen_core::dataset::{self, Dataset, SyntheticSpec};
use kaizen_core::error::{Error, Result};
use kaizen_core::model::ArchitectureSpec;
use kaizen_core::nn::optim::SgdConfig;
use kaizen_core::ssl::{SslKind, SslObjective, VicregWeights};
use kaizen_core::trainer::{ClassifierInput, LossWeights, Strategy, StrategyConfig};

/// Environment variable overriding relative dataset paths.
pub const ENV_DATA_ROOT: &str = "KAIZEN_DATA_ROOT";
/// Environment variable overriding relative output directories.
pub const ENV_OUTPUT_ROOT: &str = "KAIZEN_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `synthetic`, `cifar10`, `cifar100`, `image-dir`, or `image-folder`.
    pub id: String,
    /// Dataset root (unused for `synthetic`).
    #[serde(default)]
    pub path: PathBuf,
    /// Label index file for `image-dir`.
    #[serde(default)]
    pub index_file: PathBuf,
    /// Target resolution for `image-dir` ingestion.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

fn default_resolution() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 10,
            per_class_train: 120,
            per_class_test: 40,
            resolution: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// `kaizen`, `cassle`, or `no_distill`.
    pub name: String,
    pub kd_fe_weight: f64,
    pub kd_c_weight: f64,
    pub ct_c_weight: f64,
    pub ct_fe_weight: f64,
    pub classifier_input: ClassifierInput,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            name: "kaizen".into(),
            kd_fe_weight: 1.0,
            kd_c_weight: 2.0,
            ct_c_weight: 1.0,
            ct_fe_weight: 1.0,
            classifier_input: ClassifierInput::CurrentView1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SslSection {
    /// `simclr`, `mocov2+`, `byol`, or `vicreg`.
    pub kind: String,
    /// Method defaults apply when omitted.
    pub temperature: Option<f64>,
    pub momentum_coefficient: Option<f64>,
    pub queue_capacity: Option<usize>,
    pub symmetrize: bool,
    pub vicreg_weights: Option<VicregWeights>,
}

impl Default for SslSection {
    fn default() -> Self {
        SslSection {
            kind: "simclr".into(),
            temperature: None,
            momentum_coefficient: None,
            queue_capacity: None,
            symmetrize: false,
            vicreg_weights: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    pub backbone: String,
    pub width_multiplier: f64,
    pub classifier_hidden: usize,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub predictor_hidden: usize,
    pub head_batchnorm: bool,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        ArchitectureSection {
            backbone: "resnet18".into(),
            width_multiplier: 1.0,
            classifier_hidden: 1000,
            projector_hidden: 2048,
            projector_dim: 256,
            predictor_hidden: 512,
            head_batchnorm: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    pub fraction: f64,
    pub min_per_batch: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            fraction: 0.01,
            min_per_batch: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs_per_task: usize,
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub cosine_schedule: bool,
    pub posthoc_epochs: usize,
    pub posthoc_lr: f64,
    pub eval_batch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs_per_task: 500,
            epoch_scale: 1.0,
            batch_size: 256,
            lr: 0.3,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            cosine_schedule: true,
            posthoc_epochs: 20,
            posthoc_lr: 0.3,
            eval_batch: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Also train single-task baselines for forward transfer.
    pub forward_transfer: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Shared across strategy sweeps so all strategies see one split.
    pub partition_seed: u64,
    pub num_tasks: usize,
    pub label_fraction: f64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub strategy: StrategySection,
    pub ssl: SslSection,
    pub architecture: ArchitectureSection,
    pub replay: ReplaySection,
    pub train: TrainSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    /// Augmentation policy; the resolution-appropriate default when
    /// omitted.
    pub augment: Option<AugmentPolicy>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seeds: vec![1, 2, 3],
            partition_seed: 99,
            num_tasks: 5,
            label_fraction: 1.0,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig {
                id: "synthetic".into(),
                path: PathBuf::new(),
                index_file: PathBuf::new(),
                resolution: 32,
                synthetic: SyntheticConfig::default(),
            },
            strategy: StrategySection::default(),
            ssl: SslSection::default(),
            architecture: ArchitectureSection::default(),
            replay: ReplaySection::default(),
            train: TrainSection::default(),
            evaluation: EvaluationSection::default(),
            augment: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    /// Relative dataset and output paths resolve against the env roots
    /// when those are set.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(root) = std::env::var(ENV_DATA_ROOT) {
            if !root.is_empty() && self.dataset.path.is_relative() {
                self.dataset.path = Path::new(&root).join(&self.dataset.path);
            }
        }
        if let Ok(root) = std::env::var(ENV_OUTPUT_ROOT) {
            if !root.is_empty() && self.output_dir.is_relative() {
                self.output_dir = Path::new(&root).join(&self.output_dir);
            }
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Check everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(
                "experiment name must be non-empty and path-safe".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be at least 1".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction must be in (0, 1], got {}",
                self.label_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.replay.fraction) {
            return Err(Error::Config(format!(
                "replay fraction must be in [0, 1], got {}",
                self.replay.fraction
            )));
        }
        Strategy::parse(&self.strategy.name)?;
        SslKind::parse(&self.ssl.kind)?;
        if let Some(t) = self.ssl.temperature {
            if t <= 0.0 {
                return Err(Error::Config(format!("temperature must be > 0, got {t}")));
            }
        }
        match self.dataset.id.as_str() {
            "synthetic" | "cifar10" | "cifar100" | "image-dir" | "image-folder" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset id '{other}' \
                     (expected synthetic, cifar10, cifar100, image-dir, or image-folder)"
                )))
            }
        }
        let num_classes = self.expected_num_classes();
        if let Some(n) = num_classes {
            if self.num_tasks > n || n % self.num_tasks != 0 {
                return Err(Error::Config(format!(
                    "{n} classes cannot be split into {} equal tasks",
                    self.num_tasks
                )));
            }
        }
        self.strategy_config().validate()?;
        Ok(())
    }

    fn expected_num_classes(&self) -> Option<usize> {
        match self.dataset.id.as_str() {
            "synthetic" => Some(self.dataset.synthetic.num_classes),
            "cifar10" => Some(10),
            "cifar100" => Some(100),
            _ => None,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.dataset.id.as_str() {
            "synthetic" => dataset::synthetic(
                SyntheticSpec {
                    num_classes: self.dataset.synthetic.num_classes,
                    per_class_train: self.dataset.synthetic.per_class_train,
                    per_class_test: self.dataset.synthetic.per_class_test,
                    resolution: self.dataset.synthetic.resolution,
                },
                self.dataset.synthetic.seed,
            ),
            "cifar10" => dataset::cifar10(&self.dataset.path),
            "cifar100" => dataset::cifar100(&self.dataset.path),
            "image-dir" => dataset::image_dir(
                &self.dataset.path,
                &self.dataset.index_file,
                self.dataset.resolution,
            ),
            "image-folder" => dataset::image_folder(&self.dataset.path),
            other => Err(Error::Config(format!("unknown dataset id '{other}'"))),
        }
    }

    pub fn ssl_kind(&self) -> Result<SslKind> {
        SslKind::parse(&self.ssl.kind)
    }

    pub fn build_objective(&self) -> Result<SslObjective> {
        let kind = self.ssl_kind()?;
        let mut obj = SslObjective::new(kind);
        if let Some(t) = self.ssl.temperature {
            obj = obj.with_temperature(t)?;
        }
        if let Some(cap) = self.ssl.queue_capacity {
            obj = obj.with_queue_capacity(cap);
        }
        if let Some(m) = self.ssl.momentum_coefficient {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!(
                    "momentum_coefficient must be in [0, 1], got {m}"
                )));
            }
            obj.momentum_coefficient = m;
        }
        if let Some(w) = self.ssl.vicreg_weights {
            obj.vicreg_weights = w;
        }
        obj.symmetrize = self.ssl.symmetrize;
        Ok(obj)
    }

    pub fn architecture_spec(&self, dataset: &Dataset) -> ArchitectureSpec {
        ArchitectureSpec {
            backbone: self.architecture.backbone.clone(),
            width_multiplier: self.architecture.width_multiplier,
            classifier_hidden: self.architecture.classifier_hidden,
            num_outputs: dataset.num_classes,
            projector_hidden: self.architecture.projector_hidden,
            projector_dim: self.architecture.projector_dim,
            predictor_hidden: self.architecture.predictor_hidden,
            input_resolution: dataset.resolution,
            head_batchnorm: self.architecture.head_batchnorm,
            toy_input_dim: 3 * dataset.resolution * dataset.resolution,
            toy_feature_dim: 16,
        }
    }

    pub fn augment_policy(&self, resolution: usize) -> AugmentPolicy {
        self.augment
            .clone()
            .unwrap_or_else(|| AugmentPolicy::default_for_resolution(resolution))
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: Strategy::parse(&self.strategy.name).unwrap_or(Strategy::Kaizen),
            weights: LossWeights {
                kd_fe: self.strategy.kd_fe_weight,
                kd_c: self.strategy.kd_c_weight,
                ct_c: self.strategy.ct_c_weight,
                ct_fe: self.strategy.ct_fe_weight,
            },
            epochs_per_task: self.train.epochs_per_task,
            epoch_scale: self.train.epoch_scale,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            sgd: SgdConfig {
                momentum: self.train.sgd_momentum as f32,
                weight_decay: self.train.weight_decay as f32,
            },
            cosine_schedule: self.train.cosine_schedule,
            classifier_input: self.strategy.classifier_input,
            replay_fraction: self.replay.fraction,
            replay_min_per_batch: self.replay.min_per_batch,
            posthoc_epochs: self.train.posthoc_epochs,
            posthoc_lr: self.train.posthoc_lr,
            eval_batch: self.train.eval_batch,
            augment: self.augment_policy(match self.dataset.id.as_str() {
                "synthetic" => self.dataset.synthetic.resolution,
                "image-folder" => 224,
                _ => self.dataset.resolution,
            }),
        }
    }
}
