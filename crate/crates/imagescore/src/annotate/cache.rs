//! Content-addressed annotation cache backed by an append-only JSONL file,
//! one [`AnnotatedBatch`] per line.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{cache_key, AnnotateError, AnnotatedBatch};

#[derive(Default)]
pub struct AnnotationCache {
    path: Option<PathBuf>,
    entries: HashMap<String, AnnotatedBatch>,
}

impl AnnotationCache {
    /// In-memory cache with no persistence.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or start) a file-backed cache. Existing lines are loaded; the
    /// cache key is recomputed from each entry's prompt hash and item ids.
    pub fn open(path: &Path) -> Result<Self, AnnotateError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let batch: AnnotatedBatch =
                    serde_json::from_str(line).map_err(|e| AnnotateError::CorruptCache {
                        line: idx + 1,
                        reason: e.to_string(),
                    })?;
                let ids: Vec<&str> = batch
                    .batch
                    .items
                    .iter()
                    .map(|i| i.item_id.as_str())
                    .collect();
                entries.insert(cache_key(&batch.prompt_hash, &ids), batch);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&AnnotatedBatch> {
        self.entries.get(key)
    }

    /// Insert an entry and append it to the backing file, if any.
    pub fn put(&mut self, key: String, batch: AnnotatedBatch) -> Result<(), AnnotateError> {
        if let Some(path) = &self.path {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            writeln!(file, "{}", serde_json::to_string(&batch).expect("serializable"))?;
        }
        self.entries.insert(key, batch);
        Ok(())
    }
}
