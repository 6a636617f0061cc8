use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::fingerprint::fingerprint;
use super::{BackendError, ChatBackend, ChatRequest, Completion, Result};

const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    backend: String,
    fingerprint: String,
    response: String,
}

#[derive(Debug, Serialize)]
struct IndexLine<'a> {
    backend: &'a str,
    fingerprint: &'a str,
    file: String,
}

/// Content-addressed response store: `<dir>/<backend>/<fingerprint>.json`
/// plus an append-only `index.jsonl`. Writes are serialized.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, backend: &str, fp: &str) -> PathBuf {
        self.dir.join(sanitize(backend)).join(format!("{fp}.json"))
    }

    pub fn get(&self, backend: &str, fp: &str) -> Result<Option<String>> {
        let path = self.entry_path(backend, fp);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: Entry = serde_json::from_str(&text).map_err(|e| cache_err(&path, e))?;
        if entry.backend != backend || entry.fingerprint != fp {
            return Err(cache_err(&path, "entry does not match its key"));
        }
        self.hits.fetch_add(1, Ordering::Relaxed);
        Ok(Some(entry.response))
    }

    pub fn put(&self, backend: &str, fp: &str, response: &str) -> Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.entry_path(backend, fp);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent).map_err(|e| cache_err(parent, e))?;
        let body = serde_json::to_string_pretty(&Entry {
            backend: backend.to_string(),
            fingerprint: fp.to_string(),
            response: response.to_string(),
        })
        .map_err(|e| cache_err(&path, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))?;

        let index = self.dir.join(INDEX_FILE);
        let line = serde_json::to_string(&IndexLine {
            backend,
            fingerprint: fp,
            file: path
                .strip_prefix(&self.dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned(),
        })
        .map_err(|e| cache_err(&index, e))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| cache_err(&index, e))?;
        writeln!(f, "{line}").map_err(|e| cache_err(&index, e))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Serves repeated requests from a [`ResponseCache`] and forwards the rest.
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let fp = fingerprint(request);
        if let Some(text) = self.cache.get(self.inner.id(), &fp)? {
            return Ok(Completion { text, retries: 0 });
        }
        let completion = self.inner.complete(request)?;
        self.cache.put(self.inner.id(), &fp, &completion.text)?;
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, MockBackend};

    #[test]
    fn warm_cache_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let req = ChatRequest::from_messages(vec![ChatMessage::user("hi")]);

        let cold = CachedBackend::new(MockBackend::new("m").script(&req, "hello"), cache.clone());
        assert_eq!(cold.complete(&req).unwrap().text, "hello");
        assert_eq!(cold.inner().call_count(), 1);

        let warm = CachedBackend::new(MockBackend::new("m"), cache.clone());
        assert_eq!(warm.complete(&req).unwrap().text, "hello");
        assert_eq!(warm.inner().call_count(), 0);

        let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(index.lines().count(), 1);
        assert!(dir
            .path()
            .join("m")
            .join(format!("{}.json", fingerprint(&req)))
            .exists());
    }

    #[test]
    fn keyed_by_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        cache.put("a", "f", "x").unwrap();
        assert_eq!(cache.get("a", "f").unwrap().as_deref(), Some("x"));
        assert_eq!(cache.get("b", "f").unwrap(), None);
    }
}
