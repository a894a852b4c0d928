use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderError, Result};
use crate::bagdata::ImageRef;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Text to fixed-length binary bag-of-tokens vector. Vocabulary tokens get
/// their own slot; every other token is hashed into one of `hash_buckets`
/// slots after the vocabulary block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextFeaturizer {
    pub vocab: BTreeMap<String, usize>,
    pub hash_buckets: usize,
}

impl TextFeaturizer {
    pub fn new(vocab: impl IntoIterator<Item = String>, hash_buckets: usize) -> Self {
        let vocab = vocab.into_iter().enumerate().map(|(i, t)| (t.to_lowercase(), i)).collect();
        TextFeaturizer { vocab, hash_buckets }
    }

    pub fn dim(&self) -> usize {
        self.vocab.len() + self.hash_buckets
    }

    pub fn featurize_into(&self, text: &str, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for tok in text.split(|c: char| !c.is_alphanumeric() && c != '_').filter(|t| !t.is_empty()) {
            let tok = tok.to_lowercase();
            if let Some(&ix) = self.vocab.get(&tok) {
                out[ix] = 1.0;
            } else if self.hash_buckets > 0 {
                let b = (fnv1a64(tok.as_bytes()) % self.hash_buckets as u64) as usize;
                out[self.vocab.len() + b] = 1.0;
            }
        }
    }

    pub fn featurize(&self, texts: &[&str]) -> Array2<f64> {
        let mut m = Array2::zeros((texts.len(), self.dim()));
        for (i, t) in texts.iter().enumerate() {
            let mut row = m.row_mut(i);
            self.featurize_into(t, row.as_slice_mut().expect("row-major"));
        }
        m
    }
}

/// Precomputed per-image feature vectors keyed by image id; the toy
/// stand-in for decoded pixels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub dim: usize,
    pub features: BTreeMap<String, Vec<f64>>,
}

impl ImageFeatures {
    pub fn new(dim: usize) -> Self {
        ImageFeatures { dim, features: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(EncoderError::FeatureLength { id, got: v.len(), expected: self.dim });
        }
        self.features.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.features.get(id).map(Vec::as_slice)
    }

    pub fn matrix(&self, images: &[ImageRef]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((images.len(), self.dim));
        for (i, img) in images.iter().enumerate() {
            let v = self.get(&img.id).ok_or_else(|| EncoderError::UnknownImage(img.id.clone()))?;
            m.row_mut(i).iter_mut().zip(v).for_each(|(d, s)| *d = *s);
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
