//! Configured experiment runs: loading inputs, training the toy pair,
//! the baseline comparison and text-kind ablation, and the synthetic
//! attribute world used for desk-scale checks.

mod eval;
mod meta;
mod runs;
mod synth;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bagdata::{halves_split, names_equivalent, remove_overlap, DataError, ImageRef, Manifest, SplitSpec};
use crate::bagloss::LossError;
use crate::corpusgen::{CorpusError, TextCorpus, TextKind};
use crate::encoders::{
    dataset_hyper_or_cub, has_dataset_row, make_toy_pair, EncoderError, HyperConfig, ImageFeatures, OptimizerKind, TextFeaturizer,
    ToyConfig, ToyPair,
};
use crate::evaluator::{Aggregation, EvalError};

pub use eval::{AblationRow, ComparisonReport, ComparisonRow, ReferenceNumbers, CUB_REFERENCE};
pub use meta::{git_describe, sha256_file, RunMetadata};
pub use runs::{
    run_ablation, run_eval, run_template_training, run_training, CHECKPOINT_DIR, COMPARISON_FILE, CONFIG_SNAPSHOT,
    RANKINGS_FILE, RESULTS_FILE, RUN_METADATA, TEMPLATE_CHECKPOINT_DIR, TRAIN_LOG,
};
pub use synth::{attribute_name, build_synthetic_world, SyntheticClass, SyntheticParams, SyntheticWorld};
pub use train::{template_corpus, StepLog, Strategy, TrainResult, WEAK_AUGMENT_SIGMA};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step} (epoch {epoch}, tau {tau})")]
    NumericalDivergence { step: u64, epoch: usize, tau: f64, what: String },
    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, RunnerError>;

/// How train and test classes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// First half of the manifest classes train, the rest test.
    #[default]
    Halves,
    /// Train and test lists read from `split`.
    Explicit,
    /// Test list read from `split`; every other manifest class trains unless
    /// its name matches a test class.
    OverlapRemoved,
}

fn default_kinds() -> Vec<TextKind> {
    TextKind::ALL.to_vec()
}

fn default_embed_dim() -> usize {
    32
}

fn default_hidden_dim() -> usize {
    64
}

fn default_true() -> bool {
    true
}

/// One experiment, stored as a flat TOML file. Relative paths resolve
/// against the directory holding the file. Unset hyperparameters take the
/// dataset's table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub manifest: PathBuf,
    pub corpus: PathBuf,
    pub features: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(default = "default_kinds")]
    pub train_kinds: Vec<TextKind>,
    #[serde(default = "default_kinds")]
    pub test_kinds: Vec<TextKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation_kinds: Vec<Vec<TextKind>>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_lexicon: Option<PathBuf>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_proj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_main: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wd_proj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wd_main: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_wd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    /// Evaluate the EMA weights (default) or the live ones.
    #[serde(default = "default_true")]
    pub use_ema: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_temperature: Option<f64>,
    /// Images kept at each end of the per-class ranking report; 0 disables it.
    #[serde(default)]
    pub ranking_n: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Minimal config with every optional field at its default.
    pub fn new(dataset: &str, manifest: &str, corpus: &str, features: &str, output_dir: &str) -> Self {
        ExperimentConfig {
            dataset: dataset.to_string(),
            manifest: manifest.into(),
            corpus: corpus.into(),
            features: features.into(),
            output_dir: output_dir.into(),
            seed: 0,
            split_mode: SplitMode::Halves,
            split: None,
            train_kinds: default_kinds(),
            test_kinds: default_kinds(),
            ablation_kinds: Vec::new(),
            strategy: Strategy::Standard,
            part_lexicon: None,
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            images_per_class: None,
            lr_proj: None,
            lr_main: None,
            wd_proj: None,
            wd_main: None,
            temperature_init: None,
            temperature_lr: None,
            temperature_wd: None,
            momentum: None,
            epochs: None,
            batch_size: None,
            optimizer: None,
            use_ema: true,
            aggregation: Aggregation::Arithmetic,
            eval_temperature: None,
            ranking_n: 0,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The dataset's defaults with this file's overrides applied.
    pub fn hyper(&self) -> HyperConfig {
        let mut h = dataset_hyper_or_cub(&self.dataset);
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut h.lr_proj, self.lr_proj);
        set(&mut h.lr_main, self.lr_main);
        set(&mut h.wd_proj, self.wd_proj);
        set(&mut h.wd_main, self.wd_main);
        set(&mut h.temperature_init, self.temperature_init);
        set(&mut h.temperature_lr, self.temperature_lr);
        set(&mut h.temperature_wd, self.temperature_wd);
        set(&mut h.momentum, self.momentum);
        if let Some(e) = self.epochs {
            h.epochs = e;
        }
        if let Some(b) = self.batch_size {
            h.batch_size = b;
        }
        if let Some(o) = self.optimizer {
            h.optimizer = o;
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hyper();
        // epochs = 0 is allowed: the run just exports the initialization
        let mut probe = h;
        probe.epochs = probe.epochs.max(1);
        probe.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        if self.train_kinds.is_empty() || self.test_kinds.is_empty() {
            return Err(RunnerError::Config("train_kinds and test_kinds must be non-empty".into()));
        }
        if self.ablation_kinds.iter().any(Vec::is_empty) {
            return Err(RunnerError::Config("ablation kind sets must be non-empty".into()));
        }
        if self.split_mode != SplitMode::Halves && self.split.is_none() {
            return Err(RunnerError::Config(format!("split_mode {:?} needs a `split` file", self.split_mode)));
        }
        if self.strategy == Strategy::VisibilityMask && self.part_lexicon.is_none() {
            return Err(RunnerError::Config("strategy visibility_mask needs a `part_lexicon` file".into()));
        }
        if let Some(t) = self.eval_temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(RunnerError::Config(format!("eval_temperature must be positive, got {t}")));
            }
        }
        self.model_config(1, 1).validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self, image_dim: usize, text_dim: usize) -> ToyConfig {
        ToyConfig {
            embed_dim: self.embed_dim,
            image_dim,
            text_dim,
            hidden_dim: self.hidden_dim,
            temperature_init: self.hyper().temperature_init,
        }
    }
}

/// Image feature vectors and the text featurizer, stored together as JSON
/// `{"images": {...}, "text": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub images: ImageFeatures,
    pub text: TextFeaturizer,
}

impl FeatureFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }
}

/// Seed streams derived from the run seed.
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const EPOCH_BASE: u64 = 1000;
}

/// Everything a configured run needs, loaded and checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hyper: HyperConfig,
    pub images: IndexMap<String, Vec<ImageRef>>,
    pub corpus: TextCorpus,
    pub split: SplitSpec,
    pub images_features: Arc<ImageFeatures>,
    pub featurizer: Arc<TextFeaturizer>,
    pub lexicon: Option<BTreeMap<String, Vec<String>>>,
}

impl Experiment {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let manifest = Manifest::load(&config.resolve(&config.manifest))?;
        let images = manifest.images()?;
        let corpus = TextCorpus::load(&config.resolve(&config.corpus))?;
        let features = FeatureFile::load(&config.resolve(&config.features))?;
        let class_names: Vec<String> = images.keys().cloned().collect();
        let split = match config.split_mode {
            SplitMode::Halves => halves_split(&class_names)?,
            SplitMode::Explicit => SplitSpec::load(&config.resolve(config.split.as_ref().expect("validated")))?,
            SplitMode::OverlapRemoved => {
                let given = SplitSpec::load(&config.resolve(config.split.as_ref().expect("validated")))?;
                let others: Vec<String> = class_names.iter().filter(|c| !given.test.contains(c)).cloned().collect();
                let r = remove_overlap(&others, &given.test, names_equivalent);
                if !r.removed.is_empty() {
                    log::info!("removed {} training classes overlapping the test set", r.removed.len());
                }
                SplitSpec { train: r.kept, test: given.test }
            }
        };
        let lexicon = match &config.part_lexicon {
            Some(p) => Some(serde_json::from_slice(&std::fs::read(config.resolve(p))?)?),
            None => None,
        };
        Self::from_parts(config.clone(), images, corpus, split, features, lexicon)
    }

    pub fn from_parts(
        config: ExperimentConfig,
        images: IndexMap<String, Vec<ImageRef>>,
        corpus: TextCorpus,
        split: SplitSpec,
        features: FeatureFile,
        lexicon: Option<BTreeMap<String, Vec<String>>>,
    ) -> Result<Self> {
        config.validate()?;
        split.validate()?;
        let table_fields = [config.lr_proj, config.lr_main, config.wd_proj, config.wd_main, config.temperature_init];
        if !has_dataset_row(&config.dataset) && table_fields.iter().any(Option::is_none) {
            log::warn!("no hyperparameter row for dataset `{}`; unset values come from CUB", config.dataset);
        }
        for class in split.train.iter().chain(&split.test) {
            if images.get(class).is_none_or(Vec::is_empty) {
                return Err(DataError::NoImages(class.clone()).into());
            }
        }
        Ok(Experiment {
            hyper: config.hyper(),
            config,
            images,
            corpus,
            split,
            images_features: Arc::new(features.images),
            featurizer: Arc::new(features.text),
            lexicon,
        })
    }

    pub fn model_config(&self) -> ToyConfig {
        self.config.model_config(self.images_features.dim, self.featurizer.dim())
    }

    /// The untrained pair every run starts from (and the frozen baseline).
    pub fn initial_pair(&self) -> Result<ToyPair> {
        Ok(make_toy_pair(&self.model_config(), crate::bagdata::derive_seed(self.config.seed, streams::INIT))?)
    }

    pub fn test_images(&self) -> Vec<(ImageRef, String)> {
        self.split
            .test
            .iter()
            .flat_map(|c| self.images[c].iter().map(move |r| (r.clone(), c.clone())))
            .collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.config.resolve(&self.config.output_dir)
    }
}
