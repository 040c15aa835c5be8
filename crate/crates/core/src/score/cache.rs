//! Persistent per-prompt score cache.
//!
//! Entries are appended to `scores.jsonl` as soon as they are computed, so a
//! killed run resumes from whatever reached disk. A truncated final line is
//! ignored on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::YesProbability;
use crate::seed::sha256_hex;

pub const CACHE_FILE: &str = "scores.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub scorer: String,
    pub template_version: String,
    pub prompt_hash: String,
}

impl CacheKey {
    pub fn new(scorer: &str, template_version: &str, prompt: &str) -> Self {
        Self {
            scorer: scorer.to_string(),
            template_version: template_version.to_string(),
            prompt_hash: sha256_hex(prompt),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    #[serde(flatten)]
    key: CacheKey,
    p: f64,
    fallback: bool,
}

pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, YesProbability>>,
    writer: Mutex<Option<File>>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) `dir/scores.jsonl` and loads prior entries.
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(
                            e.key,
                            YesProbability {
                                p: e.p,
                                fallback: e.fallback,
                            },
                        );
                    }
                    Err(err) => warn!(line = i + 1, %err, "skipping unreadable score cache line"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        // A previous run may have died mid-line; start on a fresh one.
        if fs::metadata(&path)?.len() > 0 && !ends_with_newline(&path)? {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn get(&self, key: &CacheKey) -> Option<YesProbability> {
        self.entries.read().get(key).copied()
    }

    pub fn insert(&self, key: CacheKey, value: YesProbability) -> std::io::Result<()> {
        {
            let mut map = self.entries.write();
            if map.contains_key(&key) {
                return Ok(());
            }
            map.insert(key.clone(), value);
        }
        if let Some(file) = self.writer.lock().as_mut() {
            let line = serde_json::to_string(&Entry {
                key,
                p: value.p,
                fallback: value.fallback,
            })
            .expect("cache entry serializes");
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        Ok(())
    }
}

fn ends_with_newline(path: &Path) -> std::io::Result<bool> {
    let bytes = fs::read(path)?;
    Ok(bytes.last() == Some(&b'\n'))
}
