//! Named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"ESPT"
//! version  u16 (= 1)
//! manifest_len u64
//! manifest  UTF-8 JSON, `manifest_len` bytes
//! payload   f64 LE values of every tensor, concatenated in manifest order
//! ```
//!
//! The manifest lists each tensor's `name`, `shape`, `dtype` (always
//! `"f64"`), element `offset` into the payload and the sha256 of its bytes,
//! plus free-form string metadata and a content hash over all tensors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ESPT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
    pub metadata: BTreeMap<String, String>,
    pub content_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

fn tensor_bytes(t: &NamedTensor) -> Vec<u8> {
    t.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn extend(&mut self, tensors: Vec<NamedTensor>) {
        self.tensors.extend(tensors);
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Hash over every tensor's name, shape and bytes. Metadata excluded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            h.update([0u8]);
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(tensor_bytes(t));
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let e = ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f64".into(),
                    offset,
                    sha256: hex::encode(Sha256::digest(tensor_bytes(t))),
                };
                offset += t.data.len();
                e
            })
            .collect();
        Manifest {
            tensors,
            metadata: self.metadata.clone(),
            content_hash: self.content_hash(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {} shape/data mismatch",
                    t.name
                )));
            }
        }
        let manifest = serde_json::to_vec(&self.manifest())?;
        let mut out = Vec::with_capacity(14 + manifest.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            out.extend_from_slice(&tensor_bytes(t));
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |r: &str| Error::format(path, r);
        if bytes.len() < 14 || &bytes[..4] != MAGIC {
            return Err(bad("missing ESPT magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let mend = 14usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[14..mend])?;
        let payload = &bytes[mend..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.dtype != "f64" {
                return Err(bad(&format!(
                    "tensor {} has unsupported dtype {}",
                    e.name, e.dtype
                )));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset * 8;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(bad(&format!("tensor {} runs past end of payload", e.name)));
            }
            let raw = &payload[start..end];
            if hex::encode(Sha256::digest(raw)) != e.sha256 {
                return Err(bad(&format!("tensor {} fails its hash check", e.name)));
            }
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
        }
        let archive = Archive {
            metadata: manifest.metadata,
            tensors,
        };
        if archive.content_hash() != manifest.content_hash {
            return Err(bad("content hash mismatch"));
        }
        Ok(archive)
    }
}
