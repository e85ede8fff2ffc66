//! Modality feature vectors and their binary cache file.
//!
//! ```text
//! magic   b"ESPF"
//! version u16 = 1
//! dim     u32
//! count   u64
//! count × { id: u64, dim × f32 }      (all little-endian)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ESPF";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Fixed-length vector emitted by a frozen modality encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModalityFeature(pub Vec<f32>);

impl ModalityFeature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }
}

/// Features keyed by input id, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    map: BTreeMap<u64, ModalityFeature>,
}

impl FeatureMap {
    pub fn from_records(records: impl IntoIterator<Item = (u64, ModalityFeature)>) -> Result<Self> {
        let mut out = FeatureMap::default();
        for (id, f) in records {
            out.insert(id, f)?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, id: u64, feature: ModalityFeature) -> Result<()> {
        if self.map.is_empty() {
            self.dim = feature.dim();
        } else if feature.dim() != self.dim {
            return Err(Error::InconsistentFeatureDimension {
                expected: self.dim,
                found: feature.dim(),
                id,
            });
        }
        if self.map.insert(id, feature).is_some() {
            return Err(Error::DuplicateFeatureId(id));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, id: u64) -> Result<&ModalityFeature> {
        self.map.get(&id).ok_or(Error::MissingFeature(id))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.map.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &ModalityFeature)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn ids(&self) -> Vec<u64> {
        self.map.keys().copied().collect()
    }
}

pub fn write_feature_file(path: &Path, features: &FeatureMap) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(features.dim as u32).to_le_bytes())?;
    w.write_all(&(features.len() as u64).to_le_bytes())?;
    for (id, f) in features.iter() {
        w.write_all(&id.to_le_bytes())?;
        for x in &f.0 {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_feature_file(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing ESPF header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let record = 8 + 4 * dim;
    let payload = &bytes[HEADER_LEN..];
    if count.checked_mul(record) != Some(payload.len()) {
        return Err(Error::format(
            path,
            format!(
                "inconsistent feature dimension: {} payload bytes cannot hold {count} records of dim {dim}",
                payload.len()
            ),
        ));
    }
    let mut map = FeatureMap {
        dim,
        map: BTreeMap::new(),
    };
    for rec in payload.chunks_exact(record) {
        let id = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let v = rec[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if map.map.insert(id, ModalityFeature(v)).is_some() {
            return Err(Error::DuplicateFeatureId(id));
        }
    }
    Ok(map)
}
