//! Content-addressed response cache.
//!
//! One record per request fingerprint, stored at
//! `<cache_root>/<first 2 hex>/<fingerprint>.record`. Identical
//! fingerprints imply identical request content, so a record is written
//! at most once and never conflicts. The cache is the reproducibility
//! mechanism of record: temperature 0 alone does not make providers
//! deterministic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Credential-free summary of the request a record answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_summary: RequestSummary,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    /// Unix seconds at store time; informational only, never part of a
    /// report.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, fingerprint: &str) -> PathBuf {
        let shard = &fingerprint[..fingerprint.len().min(2)];
        self.root.join(shard).join(format!("{fingerprint}.record"))
    }

    pub fn load(&self, fingerprint: &str) -> std::io::Result<Option<CacheRecord>> {
        let path = self.record_path(fingerprint);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let record = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Some(record))
    }

    /// Atomic write via a temp file in the same shard directory.
    pub fn store(&self, fingerprint: &str, record: &CacheRecord) -> std::io::Result<()> {
        let path = self.record_path(fingerprint);
        let dir = path.parent().expect("record path has a parent");
        std::fs::create_dir_all(dir)?;
        let body = serde_json::to_string_pretty(record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let tmp = dir.join(format!(".{fingerprint}.tmp"));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Number of records under the cache root (test/diagnostic aid).
    pub fn record_count(&self) -> usize {
        let mut count = 0;
        let Ok(shards) = std::fs::read_dir(&self.root) else {
            return 0;
        };
        for shard in shards.flatten() {
            if let Ok(entries) = std::fs::read_dir(shard.path()) {
                count += entries
                    .flatten()
                    .filter(|e| e.path().extension().is_some_and(|x| x == "record"))
                    .count();
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CacheRecord {
        CacheRecord {
            request_summary: RequestSummary {
                endpoint: "http://localhost:9".to_string(),
                model_id: "m".to_string(),
                temperature: 0.0,
                max_output_tokens: None,
                prompt_text: "p".to_string(),
            },
            content: "c".to_string(),
            reasoning_trace: Some("t".to_string()),
            timestamp: 1,
        }
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let fp = "ab12cd";
        assert!(cache.load(fp).unwrap().is_none());
        cache.store(fp, &record()).unwrap();
        assert_eq!(cache.load(fp).unwrap().unwrap(), record());
        assert!(dir.path().join("ab").join("ab12cd.record").exists());
        assert_eq!(cache.record_count(), 1);
    }
}
