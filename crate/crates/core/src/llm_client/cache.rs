use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub template: String,
    pub response: String,
    /// Seconds since the Unix epoch when the entry was stored.
    pub timestamp: u64,
}

/// Content-addressed response store: one JSON file per entry under
/// `<dir>/<first two hex chars>/<key>.json`, or an in-memory map when no
/// directory is configured.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, CacheEntry>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { dir: None, memory: RwLock::new(HashMap::new()) }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), memory: RwLock::new(HashMap::new()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>> {
        if let Some(e) = self.memory.read().expect("cache lock").get(key) {
            return Ok(Some(e.clone()));
        }
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = Self::entry_path(dir, key);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text)
                    .map_err(|e| Error::json(path.display().to_string(), e))?;
                Ok(Some(entry))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, template: &str, response: &str) -> Result<()> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let entry = CacheEntry {
            key: key.to_owned(),
            template: template.to_owned(),
            response: response.to_owned(),
            timestamp,
        };
        if let Some(dir) = &self.dir {
            let path = Self::entry_path(dir, key);
            let body = serde_json::to_vec_pretty(&entry).map_err(|e| Error::json("cache entry", e))?;
            write_atomic(&path, &body)?;
        } else {
            self.memory.write().expect("cache lock").insert(key.to_owned(), entry);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path());
        assert!(cache.get("abcdef").unwrap().is_none());
        cache.put("abcdef", "extract", "objects = []").unwrap();
        let e = cache.get("abcdef").unwrap().unwrap();
        assert_eq!(e.response, "objects = []");
        assert!(dir.path().join("ab").join("abcdef.json").exists());
        // A fresh handle on the same directory sees the entry.
        let again = ResponseCache::on_disk(dir.path());
        assert_eq!(again.get("abcdef").unwrap().unwrap().template, "extract");
    }

    #[test]
    fn memory_roundtrip() {
        let cache = ResponseCache::in_memory();
        cache.put("k1", "cover", "uncover = []").unwrap();
        assert_eq!(cache.get("k1").unwrap().unwrap().response, "uncover = []");
    }
}
