use log::warn;
use serde::{Deserialize, Serialize};

use super::{EncoderError, ParamGroup, Result};

pub const TEMPERATURE_LR: f64 = 1e-2;
pub const TEMPERATURE_WD: f64 = 1e-6;
pub const EMA_MOMENTUM: f64 = 0.98;
pub const DEFAULT_EPOCHS: usize = 15;
pub const LARGE_DATASET_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub lr_proj: f64,
    pub lr_main: f64,
    pub wd_proj: f64,
    pub wd_main: f64,
    pub temperature_init: f64,
    pub temperature_lr: f64,
    pub temperature_wd: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_proj", self.lr_proj),
            ("lr_main", self.lr_main),
            ("wd_proj", self.wd_proj),
            ("wd_main", self.wd_main),
            ("temperature_lr", self.temperature_lr),
            ("temperature_wd", self.temperature_wd),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(EncoderError::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.temperature_init.is_finite() && self.temperature_init > 0.0) {
            return Err(EncoderError::Config(format!("temperature_init must be positive, got {}", self.temperature_init)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(EncoderError::Config(format!("momentum must lie in [0, 1], got {}", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(EncoderError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// (learning rate, weight decay) for a parameter group.
    pub fn group_rates(&self, group: ParamGroup) -> (f64, f64) {
        match group {
            ParamGroup::Backbone => (self.lr_main, self.wd_main),
            ParamGroup::Projection => (self.lr_proj, self.wd_proj),
            ParamGroup::Temperature => (self.temperature_lr, self.temperature_wd),
        }
    }
}

/// (dataset, lr_proj, lr_main, wd_proj, wd_main, temperature_init)
pub const DATASET_HYPER_TABLE: [(&str, f64, f64, f64, f64, f64); 14] = [
    ("CUB", 6e-7, 1e-7, 1e-1, 1e-1, 1.3),
    ("FGVC Aircraft", 4e-7, 1e-7, 1e-6, 1e-6, 1.8),
    ("Stanford Cars", 3e-7, 1e-7, 1e-2, 1e-2, 1.6),
    ("Flowers102", 7e-7, 1e-7, 1e-2, 1e-3, 2.0),
    ("NABirds", 8e-7, 1e-7, 1e-6, 1e-6, 1.0),
    ("iNat", 1e-7, 5e-8, 1e-3, 1e-3, 1.0),
    ("EuroSAT", 2e-6, 5e-7, 1e-6, 1e-6, 1.8),
    ("Food101", 1e-7, 5e-8, 1e-6, 1e-6, 2.0),
    ("ImageNet", 2e-6, 5e-7, 1e-6, 1e-6, 1.8),
    ("CalTech101", 1e-7, 5e-8, 1e-3, 1e-3, 2.0),
    ("DTD", 5e-7, 2e-7, 1e-6, 1e-6, 2.0),
    ("Oxford Pets", 8e-7, 2e-7, 1e-4, 1e-4, 2.0),
    ("Sun397", 1e-6, 5e-7, 1e-6, 1e-6, 2.0),
    ("UCF101", 8e-7, 2e-7, 1e-6, 1e-6, 2.0),
];

fn canonical(name: &str) -> String {
    name.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn lookup(dataset: &str) -> Option<(&'static str, f64, f64, f64, f64, f64)> {
    let key = canonical(dataset);
    let alias = match key.as_str() {
        "cub200" | "cub2002011" | "cub" => "cub",
        "inaturalist" | "inat" | "inat2021" => "inat",
        "aircraft" | "fgvcaircraft" => "fgvcaircraft",
        "cars" | "stanfordcars" => "stanfordcars",
        "flowers" | "flowers102" | "oxfordflowers102" => "flowers102",
        "pets" | "oxfordpets" => "oxfordpets",
        "caltech101" => "caltech101",
        "sun397" | "sun" => "sun397",
        other => other,
    };
    DATASET_HYPER_TABLE.iter().copied().find(|row| canonical(row.0) == alias)
}

/// Per-dataset defaults. Unknown names fall back to the CUB row with a
/// warning.
pub fn dataset_hyper(dataset: &str) -> HyperConfig {
    if !has_dataset_row(dataset) {
        warn!("no hyperparameter row for dataset `{dataset}`; using CUB defaults");
    }
    dataset_hyper_or_cub(dataset)
}

/// [`dataset_hyper`] without the warning.
pub fn dataset_hyper_or_cub(dataset: &str) -> HyperConfig {
    let row = lookup(dataset).unwrap_or(DATASET_HYPER_TABLE[0]);
    let epochs = if row.0 == "iNat" { LARGE_DATASET_EPOCHS } else { DEFAULT_EPOCHS };
    HyperConfig {
        lr_proj: row.1,
        lr_main: row.2,
        wd_proj: row.3,
        wd_main: row.4,
        temperature_init: row.5,
        temperature_lr: TEMPERATURE_LR,
        temperature_wd: TEMPERATURE_WD,
        momentum: EMA_MOMENTUM,
        epochs,
        batch_size: DEFAULT_BATCH_SIZE,
        optimizer: OptimizerKind::AdamW,
    }
}

/// True when `dataset` names a row of the bundled table.
pub fn has_dataset_row(dataset: &str) -> bool {
    lookup(dataset).is_some()
}
