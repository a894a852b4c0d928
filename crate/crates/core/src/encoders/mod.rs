//! Dual encoders: the provider seam used by evaluation, a small
//! differentiable toy pair for desk-scale training, EMA shadows, the
//! optimizer, hyperparameter presets, and checkpoints.

mod checkpoint;
mod ema;
mod features;
mod hyper;
mod optim;
mod toy;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bagdata::ImageRef;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use ema::{ema_update, EmaShadow};
pub use features::{fnv1a64, ImageFeatures, TextFeaturizer};
pub use hyper::{
    dataset_hyper, dataset_hyper_or_cub, has_dataset_row, HyperConfig, OptimizerKind, DATASET_HYPER_TABLE, DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS, EMA_MOMENTUM, LARGE_DATASET_EPOCHS, TEMPERATURE_LR, TEMPERATURE_WD,
};
pub use optim::Optimizer;
pub use toy::{make_toy_pair, Mlp, MlpCache, ToyConfig, ToyModel, ToyPair};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("parameter shape mismatch for `{0}`")]
    ShapeMismatch(String),
    #[error("no features for image `{0}`")]
    UnknownImage(String),
    #[error("feature vector for `{id}` has length {got}, expected {expected}")]
    FeatureLength { id: String, got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Which optimizer settings a parameter tensor follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Backbone,
    Projection,
    Temperature,
}

/// Anything that maps images and texts into a shared unit-norm space.
/// Real pretrained models plug in here; evaluation only needs this trait.
pub trait DualEncoder {
    fn embed_dim(&self) -> usize;
    /// One unit-norm row per image.
    fn embed_images(&self, images: &[ImageRef]) -> Result<Array2<f64>>;
    /// One unit-norm row per text.
    fn embed_texts(&self, texts: &[&str]) -> Result<Array2<f64>>;
    fn temperature(&self) -> f64;
}

/// `S = images · textsᵀ` for row-wise unit-norm embeddings.
pub fn similarity_from_embeddings(images: &Array2<f64>, texts: &Array2<f64>) -> Result<Array2<f64>> {
    if images.ncols() != texts.ncols() {
        return Err(EncoderError::DimensionMismatch(images.ncols(), texts.ncols()));
    }
    Ok(images.dot(&texts.t()))
}

pub fn similarity_matrix<E: DualEncoder + ?Sized>(
    pair: &E,
    images: &[ImageRef],
    texts: &[&str],
) -> Result<Array2<f64>> {
    similarity_from_embeddings(&pair.embed_images(images)?, &pair.embed_texts(texts)?)
}
