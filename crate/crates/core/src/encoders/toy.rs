use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    similarity_from_embeddings, DualEncoder, EncoderError, ImageFeatures, ParamGroup, Result,
    TextFeaturizer,
};
use crate::bagdata::ImageRef;

const MIN_NORM: f64 = 1e-12;

/// One hidden tanh layer followed by a bias-free linear projection and L2
/// normalization. `w1` and `b1` form the backbone, `w2` the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Array2<f64>,
    h: Array2<f64>,
    norms: Array1<f64>,
    pub embeddings: Array2<f64>,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, out: usize) -> Self {
        let n1 = Normal::new(0.0, (1.0 / input.max(1) as f64).sqrt()).unwrap();
        let nb = Normal::new(0.0, 0.1).unwrap();
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).unwrap();
        let w1 = Array2::from_shape_simple_fn((hidden, input), || n1.sample(rng));
        let b1 = Array1::from_shape_simple_fn(hidden, || nb.sample(rng));
        let w2 = Array2::from_shape_simple_fn((out, hidden), || n2.sample(rng));
        Mlp { w1, b1, w2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        if x.ncols() != self.input_dim() {
            return Err(EncoderError::DimensionMismatch(x.ncols(), self.input_dim()));
        }
        let mut h = x.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        let z = h.dot(&self.w2.t());
        let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut e = z;
        for (mut row, &n) in e.rows_mut().into_iter().zip(&norms) {
            if n < MIN_NORM {
                // degenerate direction: emit the first basis vector
                row.fill(0.0);
                row[0] = 1.0;
            } else {
                row /= n;
            }
        }
        Ok(MlpCache { x: x.to_owned(), h, norms, embeddings: e })
    }

    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.embeddings)
    }

    /// Gradients of the parameters given `d loss / d embeddings`.
    pub fn backward(&self, cache: &MlpCache, d_emb: &Array2<f64>) -> Mlp {
        let e = &cache.embeddings;
        let mut dz = d_emb.clone();
        for ((mut dz_row, e_row), &n) in dz.rows_mut().into_iter().zip(e.rows()).zip(&cache.norms) {
            if n < MIN_NORM {
                dz_row.fill(0.0);
                continue;
            }
            let proj = e_row.dot(&dz_row);
            Zip::from(&mut dz_row).and(&e_row).for_each(|d, &ev| *d = (*d - ev * proj) / n);
        }
        let w2 = dz.t().dot(&cache.h);
        let mut da = dz.dot(&self.w2);
        Zip::from(&mut da).and(&cache.h).for_each(|d, &h| *d *= 1.0 - h * h);
        let w1 = da.t().dot(&cache.x);
        let b1 = da.sum_axis(Axis(0));
        Mlp { w1, b1, w2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub embed_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub hidden_dim: usize,
    pub temperature_init: f64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(EncoderError::Config(format!("embed_dim must be >= 2, got {}", self.embed_dim)));
        }
        if self.hidden_dim == 0 || self.image_dim == 0 || self.text_dim == 0 {
            return Err(EncoderError::Config("layer sizes must be positive".into()));
        }
        if !(self.temperature_init.is_finite() && self.temperature_init > 0.0) {
            return Err(EncoderError::Config(format!(
                "temperature_init must be positive, got {}",
                self.temperature_init
            )));
        }
        Ok(())
    }
}

/// Image and text encoders plus the log-temperature. Gradients use the same
/// type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPair {
    pub image: Mlp,
    pub text: Mlp,
    pub log_tau: f64,
}

/// Deterministic toy pair from `seed`.
pub fn make_toy_pair(cfg: &ToyConfig, seed: u64) -> Result<ToyPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Mlp::init(&mut rng, cfg.image_dim, cfg.hidden_dim, cfg.embed_dim);
    let text = Mlp::init(&mut rng, cfg.text_dim, cfg.hidden_dim, cfg.embed_dim);
    Ok(ToyPair { image, text, log_tau: cfg.temperature_init.ln() })
}

impl ToyPair {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn zeros_like(&self) -> Self {
        ToyPair { image: self.image.zeros_like(), text: self.text.zeros_like(), log_tau: 0.0 }
    }

    /// Every trainable tensor with its name and group, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, ParamGroup, &[f64])> {
        vec![
            ("image.w1", ParamGroup::Backbone, self.image.w1.as_slice().expect("contiguous")),
            ("image.b1", ParamGroup::Backbone, self.image.b1.as_slice().expect("contiguous")),
            ("image.w2", ParamGroup::Projection, self.image.w2.as_slice().expect("contiguous")),
            ("text.w1", ParamGroup::Backbone, self.text.w1.as_slice().expect("contiguous")),
            ("text.b1", ParamGroup::Backbone, self.text.b1.as_slice().expect("contiguous")),
            ("text.w2", ParamGroup::Projection, self.text.w2.as_slice().expect("contiguous")),
            ("log_tau", ParamGroup::Temperature, std::slice::from_ref(&self.log_tau)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ParamGroup, &mut [f64])> {
        vec![
            ("image.w1", ParamGroup::Backbone, self.image.w1.as_slice_mut().expect("contiguous")),
            ("image.b1", ParamGroup::Backbone, self.image.b1.as_slice_mut().expect("contiguous")),
            ("image.w2", ParamGroup::Projection, self.image.w2.as_slice_mut().expect("contiguous")),
            ("text.w1", ParamGroup::Backbone, self.text.w1.as_slice_mut().expect("contiguous")),
            ("text.b1", ParamGroup::Backbone, self.text.b1.as_slice_mut().expect("contiguous")),
            ("text.w2", ParamGroup::Projection, self.text.w2.as_slice_mut().expect("contiguous")),
            ("log_tau", ParamGroup::Temperature, std::slice::from_mut(&mut self.log_tau)),
        ]
    }

    pub fn group_map(&self) -> Vec<(String, ParamGroup)> {
        self.tensors().into_iter().map(|(n, g, _)| (n.to_string(), g)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Similarity of image and text feature rows plus the caches needed to
    /// backpropagate through both encoders.
    pub fn forward(&self, image_x: ArrayView2<f64>, text_x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache, MlpCache)> {
        let ic = self.image.forward(image_x)?;
        let tc = self.text.forward(text_x)?;
        let s = similarity_from_embeddings(&ic.embeddings, &tc.embeddings)?;
        Ok((s, ic, tc))
    }

    /// Parameter gradients from `dL/dS` and `dL/dτ` (chain rule through
    /// `τ = exp(log_tau)`).
    pub fn backward(&self, ic: &MlpCache, tc: &MlpCache, d_sim: &Array2<f64>, d_tau: f64) -> ToyPair {
        let d_img = d_sim.dot(&tc.embeddings);
        let d_txt = d_sim.t().dot(&ic.embeddings);
        ToyPair {
            image: self.image.backward(ic, &d_img),
            text: self.text.backward(tc, &d_txt),
            log_tau: d_tau * self.tau(),
        }
    }
}

/// A toy pair bound to its input featurization, usable as a [`DualEncoder`].
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub pair: ToyPair,
    pub images: Arc<ImageFeatures>,
    pub featurizer: Arc<TextFeaturizer>,
}

impl ToyModel {
    pub fn new(pair: ToyPair, images: Arc<ImageFeatures>, featurizer: Arc<TextFeaturizer>) -> Result<Self> {
        if images.dim != pair.image.input_dim() {
            return Err(EncoderError::DimensionMismatch(images.dim, pair.image.input_dim()));
        }
        if featurizer.dim() != pair.text.input_dim() {
            return Err(EncoderError::DimensionMismatch(featurizer.dim(), pair.text.input_dim()));
        }
        Ok(ToyModel { pair, images, featurizer })
    }
}

impl DualEncoder for ToyModel {
    fn embed_dim(&self) -> usize {
        self.pair.image.output_dim()
    }

    fn embed_images(&self, images: &[ImageRef]) -> Result<Array2<f64>> {
        self.pair.image.embed(self.images.matrix(images)?.view())
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Array2<f64>> {
        self.pair.text.embed(self.featurizer.featurize(texts).view())
    }

    fn temperature(&self) -> f64 {
        self.pair.tau()
    }
}
