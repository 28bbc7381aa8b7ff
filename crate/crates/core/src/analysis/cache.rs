use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FundamentalAnalysis, PROMPT_VERSION};
use crate::error::{Error, Result};

/// Hex SHA-256 of the exact post text.
pub fn content_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt_version: String,
    pub analysis: FundamentalAnalysis,
}

/// Content-addressed store of analyst results, optionally persisted as
/// append-only jsonl. Entries written under another prompt version are
/// ignored on load and behave as misses.
#[derive(Debug)]
pub struct FeatureCache {
    entries: RwLock<HashMap<String, FundamentalAnalysis>>,
    path: Option<PathBuf>,
    writer: Mutex<Option<File>>,
}

impl FeatureCache {
    pub fn in_memory() -> Self {
        FeatureCache {
            entries: RwLock::new(HashMap::new()),
            path: None,
            writer: Mutex::new(None),
        }
    }

    /// Opens (or lazily creates) a cache file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line).map_err(|e| Error::Format {
                    row: i + 1,
                    reason: format!("cache entry: {e}"),
                })?;
                if entry.prompt_version == PROMPT_VERSION {
                    entries.insert(entry.key, entry.analysis);
                }
            }
        }
        Ok(FeatureCache {
            entries: RwLock::new(entries),
            path: Some(path.to_path_buf()),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, text: &str) -> Option<FundamentalAnalysis> {
        self.get_by_key(&content_key(text))
    }

    pub fn get_by_key(&self, key: &str) -> Option<FundamentalAnalysis> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an analysis. Appends to the backing file unless the same
    /// analysis is already stored under this key.
    pub fn insert(&self, text: &str, analysis: FundamentalAnalysis) -> Result<()> {
        let key = content_key(text);
        // appends are serialized through the writer lock
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if self.get_by_key(&key).as_ref() == Some(&analysis) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            if writer.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                *writer = Some(f);
            }
            let entry = CacheEntry {
                key: key.clone(),
                prompt_version: PROMPT_VERSION.to_string(),
                analysis: analysis.clone(),
            };
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            let f = writer.as_mut().expect("writer opened above");
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            f.flush().map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, analysis);
        Ok(())
    }
}
