//! On-disk helpers: JSON artifacts, little-endian latent tables and
//! content hashing of artifact trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::LatentCode;

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Index file stored next to a `latents.bin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentIndex {
    pub dim: usize,
    pub ids: Vec<String>,
}

/// Latent codes keyed by image id, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentTable {
    ids: Vec<String>,
    codes: Vec<LatentCode>,
    position: BTreeMap<String, usize>,
}

impl LatentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, code: LatentCode) -> Result<()> {
        if let Some(first) = self.codes.first() {
            if first.dim() != code.dim() {
                return Err(Error::LengthMismatch {
                    expected: first.dim(),
                    actual: code.dim(),
                });
            }
        }
        let id = id.into();
        match self.position.get(&id) {
            Some(&i) => self.codes[i] = code,
            None => {
                self.position.insert(id.clone(), self.ids.len());
                self.ids.push(id);
                self.codes.push(code);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&LatentCode> {
        self.position.get(id).map(|&i| &self.codes[i])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.codes.first().map(LatentCode::dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LatentCode)> {
        self.ids.iter().map(String::as_str).zip(self.codes.iter())
    }

    /// Writes `<stem>.bin` (D little-endian f64 per entry) and
    /// `<stem>.index.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let dim = self.dim().unwrap_or(0);
        let mut bytes = Vec::with_capacity(self.len() * dim * 8);
        for code in &self.codes {
            for v in code.as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_bytes(&dir.join(format!("{stem}.bin")), &bytes)?;
        write_json(
            &dir.join(format!("{stem}.index.json")),
            &LatentIndex {
                dim,
                ids: self.ids.clone(),
            },
        )
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let bin = dir.join(format!("{stem}.bin"));
        let index_path = dir.join(format!("{stem}.index.json"));
        if !bin.exists() || !index_path.exists() {
            return Err(Error::NotFound {
                what: "latent table",
                path: bin,
            });
        }
        let index: LatentIndex = read_json(&index_path)?;
        let bytes = read_bytes(&bin)?;
        if bytes.len() != index.ids.len() * index.dim * 8 {
            return Err(Error::malformed(
                &bin,
                format!(
                    "expected {} bytes for {} latents of dimension {}, found {}",
                    index.ids.len() * index.dim * 8,
                    index.ids.len(),
                    index.dim,
                    bytes.len()
                ),
            ));
        }
        let mut table = LatentTable::new();
        for (i, id) in index.ids.iter().enumerate() {
            let values = (0..index.dim)
                .map(|d| {
                    let off = (i * index.dim + d) * 8;
                    f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8-byte slice"))
                })
                .collect();
            table.insert(id.clone(), LatentCode::new(values).map_err(|e| Error::malformed(&bin, e))?)?;
        }
        Ok(table)
    }
}

/// Keys whose values are wall-clock measurements. They are dropped before
/// hashing JSON artifacts so reruns compare equal.
pub fn is_timing_key(key: &str) -> bool {
    key.starts_with("elapsed") || key.ends_with("_secs") || key == "timing"
}

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !is_timing_key(k));
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Hash of one artifact file. JSON and JSON-lines files are hashed after
/// removing timing fields; everything else is hashed byte for byte.
pub fn artifact_file_digest(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let normalized = match ext {
        "json" => match serde_json::from_slice::<serde_json::Value>(&bytes) {
            Ok(mut v) => {
                strip_timing(&mut v);
                serde_json::to_vec(&v)?
            }
            Err(_) => bytes,
        },
        "jsonl" => {
            let text = String::from_utf8_lossy(&bytes);
            let mut out = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut v: serde_json::Value =
                    serde_json::from_str(line).map_err(|e| Error::malformed(path, e))?;
                strip_timing(&mut v);
                out.extend(serde_json::to_vec(&v)?);
                out.push(b'\n');
            }
            out
        }
        _ => bytes,
    };
    Ok(sha256_hex(&normalized))
}

/// Relative path -> digest for every file under `root`, sorted by path.
pub fn artifact_tree_digests(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked below root")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, artifact_file_digest(&path)?);
            }
        }
    }
    Ok(out)
}

/// Single digest over a whole artifact tree.
pub fn artifact_tree_digest(root: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for (path, digest) in artifact_tree_digests(root)? {
        hasher.update(path.as_bytes());
        hasher.update([0]);
        hasher.update(digest.as_bytes());
        hasher.update([b'\n']);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = LatentTable::new();
        t.insert("a", LatentCode::new(vec![1.0, -2.5, 1e-300]).unwrap()).unwrap();
        t.insert("b", LatentCode::new(vec![0.0, 3.0, -0.0]).unwrap()).unwrap();
        t.write(dir.path(), "latents").unwrap();
        let back = LatentTable::read(dir.path(), "latents").unwrap();
        assert_eq!(back, t);
        assert!(t.insert("c", LatentCode::zeros(2)).is_err());
    }

    #[test]
    fn truncated_latent_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = LatentTable::new();
        t.insert("a", LatentCode::zeros(4)).unwrap();
        t.write(dir.path(), "x").unwrap();
        write_bytes(&dir.path().join("x.bin"), &[0u8; 7]).unwrap();
        assert!(matches!(
            LatentTable::read(dir.path(), "x"),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn timing_fields_do_not_change_digest() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        write_bytes(&a, br#"{"x": 1, "elapsed_secs": 0.5, "inner": [{"elapsed_secs": 2}]}"#).unwrap();
        write_bytes(&b, br#"{"x": 1, "elapsed_secs": 9.0, "inner": [{"elapsed_secs": 3}]}"#).unwrap();
        assert_eq!(artifact_file_digest(&a).unwrap(), artifact_file_digest(&b).unwrap());
        write_bytes(&b, br#"{"x": 2}"#).unwrap();
        assert_ne!(artifact_file_digest(&a).unwrap(), artifact_file_digest(&b).unwrap());
    }
}
