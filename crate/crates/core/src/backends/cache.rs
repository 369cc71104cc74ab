//! Append-only JSON Lines response cache.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationParams};

/// One recorded backend response. Immutable once written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub cache_key: String,
    pub backend: String,
    pub model_id: String,
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draw_key: Option<String>,
    pub prompt: String,
    pub response: String,
    /// Milliseconds since the Unix epoch; omitted for deterministic backends
    /// so recorded fixtures stay byte-stable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
    pub attempts: u32,
}

/// Concurrent readers, serialized appends. At most one entry per key.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

/// Read a cache file; the first entry for a key wins.
fn read_entries(path: &Path) -> Result<Vec<CacheEntry>, BackendError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(&line)
            .map_err(|e| io_error(path, format!("line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

impl ResponseCache {
    pub fn in_memory() -> ResponseCache {
        ResponseCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Open (or lazily create) a cache file. Existing entries are loaded.
    pub fn open(path: &Path) -> Result<ResponseCache, BackendError> {
        let mut map = HashMap::new();
        for entry in read_entries(path)? {
            map.entry(entry.cache_key.clone()).or_insert(entry);
        }
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(map),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert unless the key is already present; returns the stored entry.
    /// New entries are appended to the file as one flushed line.
    pub fn insert(&self, entry: CacheEntry) -> Result<CacheEntry, BackendError> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(existing) = self.get(&entry.cache_key) {
            return Ok(existing);
        }
        if let Some(path) = &self.path {
            if writer.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| io_error(path, e))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| io_error(path, e))?;
                *writer = Some(file);
            }
            let mut line = serde_json::to_vec(&entry).map_err(|e| io_error(path, e))?;
            line.push(b'\n');
            let file = writer.as_mut().expect("opened above");
            file.write_all(&line).map_err(|e| io_error(path, e))?;
            file.flush().map_err(|e| io_error(path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(entry.cache_key.clone(), entry.clone());
        Ok(entry)
    }

    pub fn flush(&self) -> Result<(), BackendError> {
        if let (Some(file), Some(path)) =
            (self.writer.lock().expect("cache writer lock").as_mut(), &self.path)
        {
            file.sync_all().map_err(|e| io_error(path, e))?;
        }
        Ok(())
    }

    /// All entries sorted by key.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let map = self.entries.read().expect("cache lock");
        let sorted: BTreeMap<_, _> = map.iter().collect();
        sorted.into_values().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CompactReport {
    pub lines_before: usize,
    pub entries_after: usize,
}

/// Rewrite a cache file with one entry per key, sorted by key.
pub fn compact(path: &Path) -> Result<CompactReport, BackendError> {
    let all = read_entries(path)?;
    let lines_before = all.len();
    let mut unique: BTreeMap<String, CacheEntry> = BTreeMap::new();
    for e in all {
        unique.entry(e.cache_key.clone()).or_insert(e);
    }
    let tmp = path.with_extension("jsonl.compact");
    {
        let mut out = File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
        for e in unique.values() {
            let mut line = serde_json::to_vec(e).map_err(|e| io_error(&tmp, e))?;
            line.push(b'\n');
            out.write_all(&line).map_err(|e| io_error(&tmp, e))?;
        }
        out.sync_all().map_err(|e| io_error(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))?;
    Ok(CompactReport {
        lines_before,
        entries_after: unique.len(),
    })
}
