//! Persistent call cache: an append-only JSONL file of `(key, reply)`
//! records mirrored by an in-memory map. A torn final line, as left by a
//! crash mid-write, is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BackendReply;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path}:{line}: corrupt record")]
    Corrupt { path: PathBuf, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedReply {
    pub content: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl From<&BackendReply> for CachedReply {
    fn from(r: &BackendReply) -> Self {
        Self {
            content: r.content.clone(),
            input_tokens: r.input_tokens,
            output_tokens: r.output_tokens,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    #[serde(flatten)]
    reply: CachedReply,
}

pub struct CallCache {
    entries: RwLock<HashMap<String, CachedReply>>,
    writer: Option<(PathBuf, Mutex<File>)>,
}

impl CallCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: None,
        }
    }

    /// Loads existing records from `path` (if any) and appends new ones to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut entries = HashMap::new();
        let mut valid_len = None;
        if path.exists() {
            let body = std::fs::read_to_string(&path).map_err(io)?;
            let lines: Vec<&str> = body.split_inclusive('\n').collect();
            let mut offset = 0u64;
            for (i, line) in lines.iter().enumerate() {
                let start = offset;
                offset += line.len() as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<Record>(line.trim_end())
                    .ok()
                    .filter(|_| line.ends_with('\n'));
                match parsed {
                    Some(rec) => {
                        entries.insert(rec.key, rec.reply);
                    }
                    None if i + 1 == lines.len() => {
                        log::warn!("{}: dropping torn final record", path.display());
                        valid_len = Some(start);
                    }
                    None => {
                        return Err(CacheError::Corrupt {
                            path: path.clone(),
                            line: i + 1,
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if let Some(len) = valid_len {
            file.set_len(len).map_err(io)?;
        }
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Some((path, Mutex::new(file))),
        })
    }

    pub fn get(&self, key: &str) -> Option<CachedReply> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: &str, reply: CachedReply) -> Result<(), CacheError> {
        if let Some((path, file)) = &self.writer {
            let line = serde_json::to_string(&Record {
                key: key.to_owned(),
                reply: reply.clone(),
            })
            .expect("cache record serializes");
            let mut file = file.lock().unwrap();
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|source| CacheError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        self.entries.write().unwrap().insert(key.to_owned(), reply);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.writer.as_ref().map(|(p, _)| p.as_path())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(s: &str) -> CachedReply {
        CachedReply {
            content: s.into(),
            input_tokens: 3,
            output_tokens: 1,
        }
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = CallCache::open(&path).unwrap();
            cache.put("k1", reply("a")).unwrap();
            cache.put("k2", reply("b")).unwrap();
        }
        let cache = CallCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k2"), Some(reply("b")));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = CallCache::open(&path).unwrap();
            cache.put("k1", reply("a")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"k2\",\"cont").unwrap();
        drop(f);
        let cache = CallCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        cache.put("k3", reply("c")).unwrap();
        drop(cache);
        let cache = CallCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k3"), Some(reply("c")));
    }

    #[test]
    fn corrupt_middle_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(
            &path,
            "garbage\n{\"key\":\"k\",\"content\":\"a\",\"input_tokens\":1,\"output_tokens\":1}\n",
        )
        .unwrap();
        assert!(matches!(
            CallCache::open(&path),
            Err(CacheError::Corrupt { line: 1, .. })
        ));
    }
}
