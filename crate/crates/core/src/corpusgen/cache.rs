//! Content-addressed response cache: one JSON file per request key.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub provider: String,
    pub model: String,
    pub system: String,
    pub prompt: String,
}

impl CacheKey {
    /// Hex SHA-256 over the NUL-separated key fields.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.provider, &self.model, &self.system, &self.prompt] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub model: String,
    pub system: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{}.json", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>> {
        match fs::read_to_string(self.path_for(key)) {
            Ok(s) => {
                let entry: CacheEntry = serde_json::from_str(&s)?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Stores a response. The entry is written to a temporary file and then
    /// hard-linked into place, so a key is created at most once. Writing a
    /// different response for an existing key is a `CacheConflict`.
    pub fn put(&self, key: &CacheKey, response: &str) -> Result<()> {
        let entry = CacheEntry {
            provider: key.provider.clone(),
            model: key.model.clone(),
            system: key.system.clone(),
            prompt: key.prompt.clone(),
            response: response.to_string(),
        };
        let body = serde_json::to_string_pretty(&entry)?;
        let final_path = self.path_for(key);
        let tmp = self.root.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, body)?;
        let linked = fs::hard_link(&tmp, &final_path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => match self.get(key)? {
                Some(existing) if existing == response => Ok(()),
                _ => Err(CorpusError::CacheConflict(key.digest())),
            },
            Err(e) => Err(e.into()),
        }
    }
}
