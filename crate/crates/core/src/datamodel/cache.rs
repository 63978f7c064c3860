//! Content-addressed store for generated images.
//!
//! Layout: `<root>/<class>/<key>.png` plus `<root>/index.jsonl`, one JSON
//! record per stored image. Keys are SHA-256 digests of the generation inputs.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{class_dir_name, read_png, write_png};
use super::sample::Provenance;
use super::tensor::ImageTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CACHE_INDEX: &str = "index.jsonl";

/// Inputs that fully determine one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub method: String,
    pub source_ids: Vec<String>,
    pub seed: u64,
    pub cfg_scale: f64,
    pub steps: usize,
    /// Fingerprint of the generator weights or external endpoint.
    pub generator_id: String,
    /// Free-form discriminator for parameters outside the fields above.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub extra: String,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("cache key serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub label: usize,
    pub path: String,
    pub provenance: Provenance,
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicUsize,
    misses: AtomicUsize,
    writes: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub writes: usize,
}

#[derive(Debug)]
pub struct SyntheticCache {
    root: PathBuf,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<()>,
    counters: Counters,
}

impl SyntheticCache {
    /// Open (or create) a cache rooted at `root`, reading any existing index.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let index = root.join(CACHE_INDEX);
        let mut entries = HashMap::new();
        if index.exists() {
            let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = match serde_json::from_str(line) {
                    Ok(e) => e,
                    // a torn final line from an interrupted writer is skipped
                    Err(_) if i + 1 == text.lines().count() => continue,
                    Err(e) => return Err(Error::manifest(&index, format!("line {}", i + 1), e)),
                };
                if root.join(&entry.path).exists() {
                    entries.insert(entry.key.clone(), entry);
                }
            }
        }
        Ok(Self {
            root,
            entries: RwLock::new(entries),
            writer: Mutex::new(()),
            counters: Counters::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.read().expect("cache lock").contains_key(key)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            writes: self.counters.writes.load(Ordering::Relaxed),
        }
    }

    pub fn get<S: Scalar>(&self, key: &str) -> Result<Option<(ImageTensor<S>, CacheEntry)>> {
        let entry = self.entries.read().expect("cache lock").get(key).cloned();
        match entry {
            Some(entry) => {
                self.counters.hits.fetch_add(1, Ordering::Relaxed);
                let img = read_png(&self.root.join(&entry.path))?;
                Ok(Some((img, entry)))
            }
            None => {
                self.counters.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Store an image under `key`. Storing an existing key is a no-op that
    /// returns the original entry.
    pub fn put<S: Scalar>(
        &self,
        key: &str,
        label: usize,
        class_name: &str,
        img: &ImageTensor<S>,
        provenance: &Provenance,
    ) -> Result<CacheEntry> {
        let _guard = self.writer.lock().expect("cache writer lock");
        if let Some(existing) = self.entries.read().expect("cache lock").get(key) {
            return Ok(existing.clone());
        }
        let rel = format!("{}/{key}.png", class_dir_name(label, class_name));
        let path = self.root.join(&rel);
        let tmp = path.with_extension("png.partial");
        write_png(&tmp, img)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        let entry = CacheEntry {
            key: key.to_string(),
            label,
            path: rel,
            provenance: provenance.clone(),
        };
        let index = self.root.join(CACHE_INDEX);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| Error::io(&index, e))?;
        let line = serde_json::to_string(&entry).expect("cache entry serialises");
        writeln!(f, "{line}").map_err(|e| Error::io(&index, e))?;
        self.entries
            .write()
            .expect("cache lock")
            .insert(key.to_string(), entry.clone());
        self.counters.writes.fetch_add(1, Ordering::Relaxed);
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ImageShape;

    fn key(seed: u64) -> CacheKey {
        CacheKey {
            method: "Dropout".into(),
            source_ids: vec!["a".into()],
            seed,
            cfg_scale: 2.0,
            steps: 30,
            generator_id: "g".into(),
            extra: String::new(),
        }
    }

    #[test]
    fn digests_differ_per_field() {
        let a = key(1);
        let mut b = key(1);
        assert_eq!(a.digest(), b.digest());
        b.cfg_scale = 4.0;
        assert_ne!(a.digest(), b.digest());
        assert_ne!(key(1).digest(), key(2).digest());
    }

    #[test]
    fn put_is_idempotent_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::<f32>::filled(ImageShape::new(2, 2, 1), 0.5).quantized();
        let prov = Provenance::synthetic("Dropout", 2.0, 1, vec!["a".into()]);
        let k = key(1).digest();
        {
            let cache = SyntheticCache::open(dir.path()).unwrap();
            cache.put(&k, 0, "zero", &img, &prov).unwrap();
            cache.put(&k, 0, "zero", &img, &prov).unwrap();
            assert_eq!(cache.stats().writes, 1);
        }
        let cache = SyntheticCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        let (back, entry) = cache.get::<f32>(&k).unwrap().unwrap();
        assert_eq!(back, img);
        assert_eq!(entry.provenance, prov);
        assert!(cache.get::<f32>(&key(9).digest()).unwrap().is_none());
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1, writes: 0 });
    }
}
