//! Persistent embedding cache keyed by a digest of (model id, prompt text).
//!
//! On disk the cache is line-delimited JSON, one record per vector:
//!
//! ```text
//! {"key_digest":"<sha256 hex>","model_id":"...","dim":3,"vector":"<base64 LE f64>"}
//! ```
//!
//! The same format is accepted by [`import_embeddings`] for activations
//! computed elsewhere. Keys come from [`cache_key`].

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::digest::{decode_f64s, encode_f64s, hex_digest};

/// Digest identifying one embedding: SHA-256 over the length-prefixed
/// model id and exact prompt text.
pub fn cache_key(model_id: &str, text: &str) -> String {
    hex_digest(&[model_id.as_bytes(), text.as_bytes()])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    key_digest: String,
    model_id: String,
    dim: usize,
    vector: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub model_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Default)]
struct State {
    entries: HashMap<String, CacheEntry>,
    path: Option<PathBuf>,
}

/// Thread-safe handle to an embedding cache, optionally backed by a file.
#[derive(Debug, Default)]
pub struct CacheHandle {
    state: Mutex<State>,
}

impl CacheHandle {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a file-backed cache. A missing file is an empty cache;
    /// it is created on the first [`persist`](Self::persist) with new entries.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let path = path.into();
        let entries = if path.exists() {
            read_records(&path)?
        } else {
            HashMap::new()
        };
        Ok(Self {
            state: Mutex::new(State {
                entries,
                path: Some(path),
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.lock().path.clone()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.lock().entries.get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lock().entries.contains_key(key)
    }

    pub fn keys(&self) -> Vec<String> {
        let mut k: Vec<String> = self.lock().entries.keys().cloned().collect();
        k.sort();
        k
    }

    /// Inserts one entry. Re-inserting an identical vector is a no-op; a
    /// different vector under an existing key is [`EmbedError::DuplicateKey`].
    pub fn insert(&self, key: String, entry: CacheEntry) -> Result<bool, EmbedError> {
        let mut st = self.lock();
        insert_entry(&mut st.entries, key, entry)
    }

    /// Copies every entry of `other` into this cache, same duplicate rules.
    pub fn merge(&self, other: &CacheHandle) -> Result<usize, EmbedError> {
        let incoming: Vec<(String, CacheEntry)> = other
            .lock()
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut st = self.lock();
        let mut added = 0;
        for (k, v) in incoming {
            if insert_entry(&mut st.entries, k, v)? {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Writes the whole cache to its backing file, if any. Records are sorted
    /// by key, written to a temporary sibling and renamed into place.
    pub fn persist(&self) -> Result<(), EmbedError> {
        let st = self.lock();
        let Some(path) = st.path.clone() else {
            return Ok(());
        };
        write_records(&path, &st.entries)
    }

    /// Writes the cache to `path` regardless of its backing file.
    pub fn write_to(&self, path: &Path) -> Result<(), EmbedError> {
        write_records(path, &self.lock().entries)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn insert_entry(
    entries: &mut HashMap<String, CacheEntry>,
    key: String,
    entry: CacheEntry,
) -> Result<bool, EmbedError> {
    match entries.get(&key) {
        Some(old) => {
            let same = old.model_id == entry.model_id
                && old.vector.len() == entry.vector.len()
                && old
                    .vector
                    .iter()
                    .zip(&entry.vector)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if same {
                Ok(false)
            } else {
                Err(EmbedError::DuplicateKey(key))
            }
        }
        None => {
            entries.insert(key, entry);
            Ok(true)
        }
    }
}

/// Reads a cache/import file into a fresh in-memory handle.
pub fn import_embeddings(path: &Path) -> Result<CacheHandle, EmbedError> {
    if !path.is_file() {
        return Err(EmbedError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("embedding file not found: {}", path.display()),
        )));
    }
    let entries = read_records(path)?;
    log::info!("imported {} embeddings from {}", entries.len(), path.display());
    Ok(CacheHandle {
        state: Mutex::new(State {
            entries,
            path: None,
        }),
    })
}

fn read_records(path: &Path) -> Result<HashMap<String, CacheEntry>, EmbedError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut entries = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EmbedError::ParseError {
            line: i + 1,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let vector =
            decode_f64s(&rec.vector).ok_or_else(|| bad("vector is not base64 f64 data".into()))?;
        if vector.len() != rec.dim {
            return Err(bad(format!(
                "dim {} but vector has {} values",
                rec.dim,
                vector.len()
            )));
        }
        insert_entry(
            &mut entries,
            rec.key_digest,
            CacheEntry {
                model_id: rec.model_id,
                vector,
            },
        )?;
    }
    Ok(entries)
}

fn write_records(path: &Path, entries: &HashMap<String, CacheEntry>) -> Result<(), EmbedError> {
    let mut keys: Vec<&String> = entries.keys().collect();
    keys.sort();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for k in keys {
            let e = &entries[k];
            let rec = Record {
                key_digest: k.clone(),
                model_id: e.model_id.clone(),
                dim: e.vector.len(),
                vector: encode_f64s(&e.vector),
            };
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: &[f64]) -> CacheEntry {
        CacheEntry {
            model_id: "m".into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn key_depends_on_model_and_text() {
        assert_ne!(cache_key("a", "x"), cache_key("b", "x"));
        assert_ne!(cache_key("a", "x"), cache_key("a", "x "));
        assert_eq!(cache_key("a", "x").len(), 64);
    }

    #[test]
    fn three_records_three_keys() {
        let dir = tempfile::tempdir().unwrap();
        let c = CacheHandle::in_memory();
        for i in 0..3 {
            c.insert(format!("k{i}"), entry(&[i as f64, 0.5])).unwrap();
        }
        let p = dir.path().join("e.jsonl");
        c.write_to(&p).unwrap();
        let back = import_embeddings(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.get("k2").unwrap().vector, vec![2.0, 0.5]);
    }

    #[test]
    fn conflicting_duplicate_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let line = |v: &[f64]| {
            format!(
                "{{\"key_digest\":\"k\",\"model_id\":\"m\",\"dim\":{},\"vector\":\"{}\"}}\n",
                v.len(),
                encode_f64s(v)
            )
        };
        std::fs::write(&p, line(&[1.0]) + &line(&[1.0])).unwrap();
        assert_eq!(import_embeddings(&p).unwrap().len(), 1);
        std::fs::write(&p, line(&[1.0]) + &line(&[2.0])).unwrap();
        assert!(matches!(import_embeddings(&p), Err(EmbedError::DuplicateKey(_))));
    }

    #[test]
    fn malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "{\"key_digest\":\"k\"}\n").unwrap();
        assert!(matches!(import_embeddings(&p), Err(EmbedError::ParseError { line: 1, .. })));
        let v = encode_f64s(&[1.0, 2.0]);
        std::fs::write(
            &p,
            format!("\n{{\"key_digest\":\"k\",\"model_id\":\"m\",\"dim\":3,\"vector\":\"{v}\"}}\n"),
        )
        .unwrap();
        assert!(matches!(import_embeddings(&p), Err(EmbedError::ParseError { line: 2, .. })));
    }

    #[test]
    fn persist_is_bitwise_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/cache.jsonl");
        let c = CacheHandle::open(&p).unwrap();
        let tricky = [f64::MIN_POSITIVE, -0.0, 1.0 / 3.0, 1e300, f64::EPSILON];
        c.insert("b".into(), entry(&tricky)).unwrap();
        c.insert("a".into(), entry(&[0.1])).unwrap();
        c.persist().unwrap();
        let first = std::fs::read(&p).unwrap();
        let re = CacheHandle::open(&p).unwrap();
        let got = re.get("b").unwrap().vector;
        assert!(got.iter().zip(&tricky).all(|(a, b)| a.to_bits() == b.to_bits()));
        re.persist().unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }
}
