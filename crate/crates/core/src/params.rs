//! Flat named parameter storage shared by the backbone, adapter and value head.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content hash of a parameter set (hex sha256 over names, shapes and bits).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
    frozen: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            specs: Vec::new(),
            data: Vec::new(),
            frozen: false,
        }
    }

    /// Append a zero-initialized tensor and return its range.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        let range = spec.range();
        self.data.resize(range.end, 0.0);
        self.specs.push(spec);
        range
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let spec = self
            .spec(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"));
        &self.data[spec.range()]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self
            .spec(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
            .range();
        &mut self.data[range]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values. Ignores the frozen flag: only the
    /// optimizer honours freezing, initialization code may still write.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for spec in &self.specs {
            hasher.update((spec.name.len() as u64).to_le_bytes());
            hasher.update(spec.name.as_bytes());
            hasher.update((spec.shape.len() as u64).to_le_bytes());
            for d in &spec.shape {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in &self.data[spec.range()] {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        Fingerprint(hex::encode(hasher.finalize()))
    }

    /// Copy values from another store with an identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.specs != other.specs {
            return Err(Error::InvalidArgument("parameter layouts differ".into()));
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    /// Export as named tensors, each name prefixed with `namespace.`.
    pub fn to_tensors(&self, namespace: &str) -> Vec<crate::checkpoint::NamedTensor> {
        self.specs
            .iter()
            .map(|s| crate::checkpoint::NamedTensor {
                name: format!("{namespace}.{}", s.name),
                shape: s.shape.clone(),
                data: self.data[s.range()].to_vec(),
            })
            .collect()
    }

    /// Fill from named tensors produced by [`ParamStore::to_tensors`].
    pub fn load_tensors(
        &mut self,
        namespace: &str,
        tensors: &[crate::checkpoint::NamedTensor],
    ) -> Result<()> {
        for spec in &self.specs {
            let full = format!("{namespace}.{}", spec.name);
            let t = tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks tensor {full}")))?;
            if t.shape != spec.shape {
                return Err(Error::InvalidArgument(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    t.shape, spec.shape
                )));
            }
            self.data[spec.range()].copy_from_slice(&t.data);
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}
