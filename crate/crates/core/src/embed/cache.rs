use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{EmbeddingKey, EmbeddingProvider, EmbeddingVector};
use crate::{Error, Result};

type Digest32 = [u8; 32];

/// Content address of a pair: SHA-256 of `query U+001F passage`.
pub fn key_digest(key: &EmbeddingKey) -> Digest32 {
    let mut h = Sha256::new();
    h.update(key.query.as_bytes());
    h.update([0x1f]);
    h.update(key.passage.as_bytes());
    h.finalize().into()
}

/// Append-only embedding store. Each record is
/// `sha256(key) | dim: u32 LE | dim × f32 LE`. Reads are concurrent;
/// appends are serialised.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Digest32, Arc<EmbeddingVector>>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl EmbeddingCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache file and loads every readable record.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            load_records(&bytes, &mut entries, path);
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EmbeddingCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<EmbeddingVector> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&key_digest(key))
            .map(|v| (**v).clone())
    }

    /// Stores `vector` under `key`. Existing entries are kept as-is.
    pub fn put(&self, key: &EmbeddingKey, vector: &EmbeddingVector) -> Result<()> {
        let digest = key_digest(key);
        let mut writer = self.writer.lock().expect("cache writer lock");
        if self
            .entries
            .read()
            .expect("cache lock")
            .contains_key(&digest)
        {
            return Ok(());
        }
        if let Some(w) = writer.as_mut() {
            w.write_all(&digest)?;
            w.write_all(&(vector.dim() as u32).to_le_bytes())?;
            for v in vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(digest, Arc::new(vector.clone()));
        Ok(())
    }

    /// Writes one JSON object per entry, sorted by key digest.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            key: String,
            dim: usize,
            values: &'a [f32],
        }
        let entries = self.entries.read().expect("cache lock");
        let mut keys: Vec<&Digest32> = entries.keys().collect();
        keys.sort();
        for k in keys {
            let v = &entries[k];
            serde_json::to_writer(
                &mut out,
                &Row {
                    key: hex::encode(k),
                    dim: v.dim(),
                    values: v.values(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn load_records(bytes: &[u8], entries: &mut HashMap<Digest32, Arc<EmbeddingVector>>, path: &Path) {
    let mut pos = 0;
    while pos < bytes.len() {
        let header_end = pos + 36;
        if header_end > bytes.len() {
            log::warn!(
                "{}: truncated record header at byte {pos}; ignoring the tail",
                path.display()
            );
            return;
        }
        let digest: Digest32 = bytes[pos..pos + 32].try_into().expect("32 bytes");
        let dim =
            u32::from_le_bytes(bytes[pos + 32..header_end].try_into().expect("4 bytes")) as usize;
        let end = header_end + 4 * dim;
        if dim == 0 || end > bytes.len() {
            log::warn!(
                "{}: corrupt record at byte {pos} (dim {dim}); ignoring the tail",
                path.display()
            );
            return;
        }
        let values: Vec<f32> = bytes[header_end..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        match EmbeddingVector::new(values) {
            Ok(v) => {
                entries.entry(digest).or_insert_with(|| Arc::new(v));
            }
            Err(e) => log::warn!("{}: skipping record at byte {pos}: {e}", path.display()),
        }
        pos = end;
    }
}

/// Serves embeddings from `cache`, asking `inner` only for misses and
/// persisting what it returns.
pub struct CachedProvider<P> {
    inner: P,
    cache: EmbeddingCache,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: EmbeddingCache) -> Self {
        CachedProvider { inner, cache }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        let mut out: Vec<Option<EmbeddingVector>> =
            keys.iter().map(|k| self.cache.get(k)).collect();
        let misses: Vec<usize> = (0..keys.len()).filter(|&i| out[i].is_none()).collect();
        if !misses.is_empty() {
            let miss_keys: Vec<EmbeddingKey> = misses.iter().map(|&i| keys[i].clone()).collect();
            let fetched = self.inner.embed_batch(&miss_keys)?;
            if fetched.len() != miss_keys.len() {
                return Err(Error::Transport(
                    "provider returned the wrong number of embeddings".into(),
                ));
            }
            for (&i, v) in misses.iter().zip(fetched) {
                if v.dim() != self.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim(),
                        actual: v.dim(),
                    });
                }
                self.cache.put(&keys[i], &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
