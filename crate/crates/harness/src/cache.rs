//! Content-addressed on-disk response cache.
//!
//! The key is `sha256(kind || 0x00 || canonical JSON of the request)`;
//! `serde_json` serializes maps with sorted keys, which makes the encoding
//! canonical. Entries live at `<dir>/<kind>/<key>.json` and hold the raw
//! response body, so a hit returns exactly the bytes first received.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::HarnessError;
use crate::fsio::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Llm,
    Entail,
    Embed,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Entail => "entail",
            Self::Embed => "embed",
        }
    }
}

/// Canonical byte encoding of a request body.
pub fn canonical_json(value: &Value) -> String {
    // Value's map type is a BTreeMap unless serde_json's `preserve_order`
    // feature is enabled, so keys come out sorted.
    value.to_string()
}

pub fn content_key(kind: CallKind, request: &Value) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_str().as_bytes());
    h.update([0u8]);
    h.update(canonical_json(request).as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: CallKind,
    pub request: Value,
    pub response: String,
    pub timestamp: String,
}

/// Safe for concurrent use: entries are immutable once written and writes
/// are atomic renames.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, kind: CallKind, key: &str) -> PathBuf {
        self.dir.join(kind.as_str()).join(format!("{key}.json"))
    }

    pub fn get(&self, kind: CallKind, request: &Value) -> Option<CacheEntry> {
        let key = content_key(kind, request);
        let bytes = fs::read(self.path(kind, &key)).ok()?;
        // A corrupt or foreign entry is treated as a miss and overwritten.
        serde_json::from_slice::<CacheEntry>(&bytes)
            .ok()
            .filter(|e| e.key == key && e.kind == kind)
    }

    pub fn put(
        &self,
        kind: CallKind,
        request: &Value,
        response: &str,
    ) -> Result<CacheEntry, HarnessError> {
        let key = content_key(kind, request);
        let entry = CacheEntry {
            key: key.clone(),
            kind,
            request: request.clone(),
            response: response.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let bytes = serde_json::to_vec(&entry).map_err(|e| HarnessError::Data(e.to_string()))?;
        write_atomic(self.path(kind, &key), &bytes)?;
        Ok(entry)
    }

    pub fn len(&self, kind: CallKind) -> usize {
        fs::read_dir(self.dir.join(kind.as_str()))
            .map(|d| {
                d.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self, kind: CallKind) -> bool {
        self.len(kind) == 0
    }
}
