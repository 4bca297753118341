//! Append-only record/replay log.
//!
//! Each line holds `{"request": <canonical request>, "record": <record>}`.
//! A torn final line left by an interrupted run is cut off when the cache is
//! reopened, so a resumed run appends to a well-formed file.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionRecord};

#[derive(Serialize, Deserialize)]
struct Entry {
    request: serde_json::Value,
    record: CompletionRecord,
}

pub struct RecordCache {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, CompletionRecord>>,
    file: Mutex<Option<File>>,
}

fn cache_err(path: &Path, message: impl ToString) -> BackendError {
    BackendError::Cache {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl RecordCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            records: RwLock::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the log at `path` and indexes its records.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| cache_err(path, e))?;
        }
        let records = if path.exists() {
            Self::load(path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: RwLock::new(records),
            file: Mutex::new(Some(file)),
        })
    }

    /// Opens an existing log without the ability to append.
    pub fn open_read_only(path: &Path) -> Result<Self, BackendError> {
        if !path.exists() {
            return Err(cache_err(path, "cache file does not exist"));
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: RwLock::new(Self::load(path)?),
            file: Mutex::new(None),
        })
    }

    fn load(path: &Path) -> Result<HashMap<String, CompletionRecord>, BackendError> {
        let mut bytes = fs::read(path).map_err(|e| cache_err(path, e))?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "dropping torn cache tail");
            bytes.truncate(keep);
            let f = OpenOptions::new().write(true).open(path).map_err(|e| cache_err(path, e))?;
            f.set_len(keep as u64).map_err(|e| cache_err(path, e))?;
        }
        let text = String::from_utf8(bytes).map_err(|e| cache_err(path, e))?;
        let mut out = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: Entry = serde_json::from_str(line)
                .map_err(|e| cache_err(path, format!("line {}: {e}", n + 1)))?;
            let canonical = serde_json::to_string(&entry.request).expect("value serializes");
            let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
            if digest != entry.record.request_digest {
                return Err(cache_err(path, format!("line {}: digest mismatch", n + 1)));
            }
            out.entry(digest).or_insert(entry.record);
        }
        Ok(out)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, digest: &str) -> Option<CompletionRecord> {
        self.records.read().unwrap().get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cached record, sorted by digest.
    pub fn records(&self) -> Vec<CompletionRecord> {
        let mut v: Vec<CompletionRecord> = self.records.read().unwrap().values().cloned().collect();
        v.sort_by(|a, b| a.request_digest.cmp(&b.request_digest));
        v
    }

    /// Persists `record`; `canonical_request` must hash to its digest.
    pub fn append(&self, canonical_request: &str, record: &CompletionRecord) -> Result<(), BackendError> {
        let request: serde_json::Value = serde_json::from_str(canonical_request)
            .map_err(|e| BackendError::Cache { path: String::new(), message: e.to_string() })?;
        {
            let mut file = self.file.lock().unwrap();
            if let Some(f) = file.as_mut() {
                let mut line = serde_json::to_string(&Entry { request, record: record.clone() })
                    .expect("entry serializes");
                line.push('\n');
                let path = self.path.as_deref().unwrap_or(Path::new(""));
                f.write_all(line.as_bytes()).map_err(|e| cache_err(path, e))?;
                f.flush().map_err(|e| cache_err(path, e))?;
            }
        }
        self.records
            .write()
            .unwrap()
            .entry(record.request_digest.clone())
            .or_insert_with(|| record.clone());
        Ok(())
    }
}
