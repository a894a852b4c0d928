use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmaShadow, EncoderError, ParamGroup, Result, TextFeaturizer, ToyConfig, ToyPair};

pub const LIVE_FILE: &str = "live.json";
pub const EMA_FILE: &str = "ema.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub temperature: f64,
    pub momentum: f64,
    pub step: u64,
    pub groups: Vec<(String, ParamGroup)>,
    pub model: ToyConfig,
    pub featurizer: TextFeaturizer,
}

/// Live and EMA weights plus metadata. On disk: a directory with
/// `live.json`, `ema.json` and `meta.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub live: ToyPair,
    pub ema: EmaShadow,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(live: ToyPair, ema: EmaShadow, step: u64, model: ToyConfig, featurizer: TextFeaturizer) -> Self {
        let meta = CheckpointMeta {
            temperature: live.tau(),
            momentum: ema.momentum,
            step,
            groups: live.group_map(),
            model,
            featurizer,
        };
        Checkpoint { live, ema, meta }
    }

    /// EMA encoders with the live temperature, or the live pair.
    pub fn weights(&self, use_ema: bool) -> ToyPair {
        if use_ema {
            self.ema.to_pair(self.live.log_tau)
        } else {
            self.live.clone()
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(LIVE_FILE), serde_json::to_vec(&self.live)?)?;
        fs::write(dir.join(EMA_FILE), serde_json::to_vec(&self.ema)?)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(META_FILE).is_file() {
            return Err(EncoderError::MissingCheckpoint(dir.display().to_string()));
        }
        let read = |name: &str| -> Result<Vec<u8>> {
            fs::read(dir.join(name)).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => EncoderError::MissingCheckpoint(dir.join(name).display().to_string()),
                _ => EncoderError::Io(e),
            })
        };
        let live: ToyPair = serde_json::from_slice(&read(LIVE_FILE)?)?;
        let ema: EmaShadow = serde_json::from_slice(&read(EMA_FILE)?)?;
        let meta: CheckpointMeta = serde_json::from_slice(&read(META_FILE)?)?;
        Ok(Checkpoint { live, ema, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::make_toy_pair;

    #[test]
    fn round_trip() {
        let cfg = ToyConfig { embed_dim: 3, image_dim: 4, text_dim: 5, hidden_dim: 6, temperature_init: 0.7 };
        let live = make_toy_pair(&cfg, 4).unwrap();
        let mut ema = EmaShadow::new(&make_toy_pair(&cfg, 5).unwrap(), 0.98).unwrap();
        ema.update(&live).unwrap();
        let feat = TextFeaturizer::new(["wing".to_string(), "beak".to_string()], 3);
        let ck = Checkpoint::new(live, ema, 17, cfg, feat);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta.step, 17);
        assert!((back.meta.temperature - 0.7).abs() < 1e-12);
        assert_eq!(back.weights(true).image, ck.ema.image);
        assert_eq!(back.weights(false), ck.live);
    }

    #[test]
    fn missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Checkpoint::load(&dir.path().join("nope")), Err(EncoderError::MissingCheckpoint(_))));
    }
}
