//! Content-addressed on-disk cache of log-probability results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::{ProviderVersion, TokenLogProbs};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    version: ProviderVersion,
    context: String,
    continuation: String,
    logprobs: TokenLogProbs,
}

/// One JSON file per key at `<root>/<2 hex>/<64 hex>.json`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(DiskCache { root })
    }

    pub fn key(version: &ProviderVersion, context: &str, continuation: &str) -> String {
        let mut h = Sha256::new();
        for part in [version.as_str(), context, continuation] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, version: &ProviderVersion, context: &str, continuation: &str) -> Option<TokenLogProbs> {
        let path = self.path_for(&Self::key(version, context, continuation));
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Record>(&bytes) {
            Ok(r) if &r.version == version && r.context == context && r.continuation == continuation => {
                Some(r.logprobs)
            }
            Ok(_) => None,
            Err(e) => {
                warn!(path = %path.display(), "ignoring unreadable cache entry: {e}");
                None
            }
        }
    }

    pub fn put(
        &self,
        version: &ProviderVersion,
        context: &str,
        continuation: &str,
        logprobs: &TokenLogProbs,
    ) -> Result<()> {
        let path = self.path_for(&Self::key(version, context, continuation));
        let record = Record {
            version: version.clone(),
            context: context.to_string(),
            continuation: continuation.to_string(),
            logprobs: logprobs.clone(),
        };
        write_atomic(&path, &serde_json::to_vec(&record)?)
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
