//! Run configuration, read from TOML.
//!
//! ```toml
//! name = "logreg-svrg"
//! epochs = 30
//! batch_size = 128
//! seeds = [1, 2, 3]
//!
//! [dataset]
//! source = "synthetic"        # or "csv" (path = file) or "cifar10" (path = directory)
//! n_classes = 10
//! n_per_class = 256
//! dim = 32
//! class_separation = 3.0
//!
//! [model]
//! hidden_widths = []          # [] logistic regression, [w, w, w] MLP-4
//! label_smoothing = 0.0
//!
//! [optimizer]
//! kind = "sgd"                # or "adamw"
//! lr = 0.05
//! momentum = 0.9
//!
//! [lr_schedule]
//! kind = "constant"           # or "cosine"
//! warmup_epochs = 0
//!
//! [vr]                        # omit for the base optimizer alone
//! family = "linear"
//! alpha0 = 0.5
//!
//! [measurement]
//! every_k_epochs = 1
//! n_batches = 64
//! ```
//!
//! Every omitted field takes the default documented on its struct.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, DEFAULT_INIT_STD, DEFAULT_LABEL_SMOOTHING};
use crate::optim::OptimizerConfig;
use crate::vr::{ScheduleFamily, ScheduleSpec, VrConfig};

use super::lr::LrSchedule;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "ALPHASVRG_OUT_DIR";
pub const DEFAULT_ORACLE_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub lr_schedule: LrConfig,
    #[serde(default)]
    pub vr: Option<VrSection>,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_name() -> String {
    "run".into()
}
fn default_batch_size() -> usize {
    128
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n_classes: usize,
        n_per_class: usize,
        dim: usize,
        class_separation: f64,
        /// Fixed data seed; defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
    },
    Cifar10 {
        path: PathBuf,
        /// Keep only the first `limit` records.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_LABEL_SMOOTHING
}
fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_widths: Vec::new(),
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, n_classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden_widths: self.hidden_widths.clone(),
            n_classes,
            label_smoothing: self.label_smoothing,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LrConfig {
    #[serde(default)]
    pub kind: LrSchedule,
    #[serde(default)]
    pub warmup_epochs: usize,
    /// When set, the optimizer's lr is scaled by `batch_size / reference_batch_size`.
    #[serde(default)]
    pub reference_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrSection {
    pub family: ScheduleFamily,
    #[serde(default = "one")]
    pub alpha0: f64,
    #[serde(default = "default_alpha_final")]
    pub alpha_final: f64,
    #[serde(default)]
    pub inner_loop_size: Option<usize>,
    #[serde(default = "one")]
    pub early_fraction: f64,
    #[serde(default = "default_transition")]
    pub transition_epochs: usize,
}

fn one() -> f64 {
    1.0
}
fn default_alpha_final() -> f64 {
    crate::vr::schedule::DEFAULT_ALPHA_FINAL
}
fn default_transition() -> usize {
    1
}

impl VrSection {
    pub fn build(&self, epochs: usize, iters_per_epoch: usize) -> VrConfig {
        VrConfig {
            schedule: ScheduleSpec {
                family: self.family,
                alpha0: self.alpha0,
                alpha_final: self.alpha_final,
                epochs,
                iters_per_epoch,
            },
            inner_loop_size: self.inner_loop_size,
            early_fraction: self.early_fraction,
            transition_epochs: self.transition_epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Metric1,
    Metric2,
    Metric3,
    /// Optimal coefficient with its correlation / std-ratio decomposition.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Measure every k-th epoch; 0 disables measurement.
    #[serde(default = "default_every")]
    pub every_k_epochs: usize,
    /// Equally spaced checkpoints per measured epoch; the last one sits at
    /// the epoch's final iteration.
    #[serde(default = "default_per_epoch")]
    pub per_epoch: usize,
    /// Leading epochs measured at every iteration.
    #[serde(default = "default_dense")]
    pub dense_epochs: usize,
    /// Number of mini-batch gradients per checkpoint (N).
    #[serde(default = "default_n")]
    pub n_batches: usize,
    /// Mini-batch size for measurement; defaults to the training batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
}

fn default_every() -> usize {
    1
}
fn default_per_epoch() -> usize {
    1
}
fn default_dense() -> usize {
    5
}
fn default_n() -> usize {
    64
}
fn default_metrics() -> Vec<MetricKind> {
    vec![
        MetricKind::Metric1,
        MetricKind::Metric2,
        MetricKind::Metric3,
        MetricKind::Optimal,
    ]
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            every_k_epochs: default_every(),
            per_epoch: default_per_epoch(),
            dense_epochs: default_dense(),
            n_batches: default_n(),
            batch_size: None,
            metrics: default_metrics(),
        }
    }
}

impl MeasurementConfig {
    pub fn off() -> Self {
        MeasurementConfig {
            every_k_epochs: 0,
            dense_epochs: 0,
            ..Default::default()
        }
    }

    pub fn enabled(&self) -> bool {
        !self.metrics.is_empty() && (self.every_k_epochs > 0 || self.dense_epochs > 0)
    }

    pub fn wants(&self, m: MetricKind) -> bool {
        self.metrics.contains(&m)
    }

    pub fn is_checkpoint(&self, epoch: usize, iter: usize, iters_per_epoch: usize) -> bool {
        if self.metrics.is_empty() {
            return false;
        }
        if epoch < self.dense_epochs {
            return true;
        }
        if self.every_k_epochs == 0 || !epoch.is_multiple_of(self.every_k_epochs) {
            return false;
        }
        let p = self.per_epoch.clamp(1, iters_per_epoch);
        (0..p).any(|j| (j + 1) * iters_per_epoch / p - 1 == iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Upper bound on `d · N` (parameters times paired gradients) for the
    /// per-iteration optimal-coefficient mode.
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_ORACLE_BUDGET
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            budget: DEFAULT_ORACLE_BUDGET,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn effective_lr(&self) -> f64 {
        let base = self.optimizer.base_lr();
        match self.lr_schedule.reference_batch_size {
            Some(r) if r > 0 => base * self.batch_size as f64 / r as f64,
            _ => base,
        }
    }

    /// All problems with the config, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be >= 1".to_string());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must be nonempty".to_string());
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            errs.push("seeds must be distinct".to_string());
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                n_classes,
                n_per_class,
                dim,
                class_separation,
                ..
            } => {
                if *n_classes < 2 {
                    errs.push("dataset.n_classes must be >= 2".into());
                }
                if *n_per_class == 0 || *dim == 0 {
                    errs.push("dataset.n_per_class and dataset.dim must be >= 1".into());
                }
                if !(*class_separation > 0.0) {
                    errs.push("dataset.class_separation must be positive".into());
                }
                if n_classes * n_per_class < self.batch_size {
                    errs.push(format!(
                        "batch_size {} exceeds dataset size {}",
                        self.batch_size,
                        n_classes * n_per_class
                    ));
                }
            }
            DatasetConfig::Csv { path } | DatasetConfig::Cifar10 { path, .. } => {
                if !path.exists() {
                    errs.push(format!("dataset path {} does not exist", path.display()));
                }
            }
        }
        if self.model.hidden_widths.contains(&0) {
            errs.push("model.hidden_widths must be positive".into());
        }
        if !(0.0..0.5).contains(&self.model.label_smoothing) {
            errs.push(format!(
                "model.label_smoothing must be in [0, 0.5), got {}",
                self.model.label_smoothing
            ));
        }
        if !(self.model.init_std > 0.0) {
            errs.push("model.init_std must be positive".into());
        }
        errs.extend(self.optimizer.validate());
        if self.epochs > 0 && self.lr_schedule.warmup_epochs >= self.epochs {
            errs.push(format!(
                "lr_schedule.warmup_epochs {} must be < epochs {}",
                self.lr_schedule.warmup_epochs, self.epochs
            ));
        }
        if self.lr_schedule.reference_batch_size == Some(0) {
            errs.push("lr_schedule.reference_batch_size must be >= 1".into());
        }
        if let Some(vr) = &self.vr {
            // M is unknown until the dataset is loaded; 1 keeps the check shape-free
            errs.extend(vr.build(self.epochs.max(1), 1).validate());
        }
        let m = &self.measurement;
        if m.enabled() && m.n_batches < 2 {
            errs.push("measurement.n_batches must be >= 2".into());
        }
        if m.batch_size == Some(0) {
            errs.push("measurement.batch_size must be >= 1".into());
        }
        if m.per_epoch == 0 {
            errs.push("measurement.per_epoch must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Output directory, honouring [`OUTPUT_DIR_ENV`].
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir).join(&self.name);
            }
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(&self.name)
    }
}
