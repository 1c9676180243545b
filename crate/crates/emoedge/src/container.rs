//! Named-tensor container: a JSON manifest followed by one little-endian
//! blob, in a single file.
//!
//! Layout: 8-byte magic, manifest length as u64 LE, manifest JSON, blob.
//! The manifest records each tensor's shape, dtype, quantization and byte
//! range, plus the SHA-256 of the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use emoedge_core::tensor::{DType, QuantParams, Tensor, TensorData};
use emoedge_core::ModelGraph;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"EMOTNSR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a tensor container (bad magic)")]
    BadMagic,
    #[error("container truncated: need {needed} bytes, have {have}")]
    Truncated { needed: u64, have: u64 },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("blob checksum mismatch: manifest says {expected}, data hashes to {found}")]
    Checksum { expected: String, found: String },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor `{name}` is {found}, expected {expected}")]
    DTypeMismatch { name: String, expected: DType, found: DType },
}

type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub endianness: String,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: u64,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: serde_json::Value,
}

fn hex_digest(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

impl Container {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self { tensors: BTreeMap::new(), metadata }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| ContainerError::MissingTensor(name.into()))
    }

    /// `name`, checked against an expected shape and dtype.
    pub fn expect(&self, name: &str, shape: &[usize], dtype: DType) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(ContainerError::ShapeMismatch { name: name.into(), expected: shape.to_vec(), found: t.shape().to_vec() });
        }
        if t.dtype() != dtype {
            return Err(ContainerError::DTypeMismatch { name: name.into(), expected: dtype, found: t.dtype() });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, t) in &self.tensors {
            let bytes = t.data().to_le_bytes();
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: t.dtype(),
                quant: t.quant(),
                offset: blob.len() as u64,
                bytes: bytes.len() as u64,
            });
            blob.extend_from_slice(&bytes);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            endianness: "little".into(),
            tensors: entries,
            blob_bytes: blob.len() as u64,
            sha256: hex_digest(&blob),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let have = data.len() as u64;
        if data.len() < 16 {
            return Err(ContainerError::Truncated { needed: 16, have });
        }
        if &data[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let json_len = u64::from_le_bytes(data[8..16].try_into().unwrap());
        let blob_start = 16u64.checked_add(json_len).ok_or(ContainerError::Truncated { needed: u64::MAX, have })?;
        if blob_start > have {
            return Err(ContainerError::Truncated { needed: blob_start, have });
        }
        let manifest: Manifest = serde_json::from_slice(&data[16..blob_start as usize])
            .map_err(|e| ContainerError::Manifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(ContainerError::Manifest(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.endianness != "little" {
            return Err(ContainerError::Manifest(format!("unsupported endianness `{}`", manifest.endianness)));
        }
        let needed = blob_start + manifest.blob_bytes;
        if needed > have {
            return Err(ContainerError::Truncated { needed, have });
        }
        if needed < have {
            return Err(ContainerError::Manifest(format!("{} trailing bytes after the blob", have - needed)));
        }
        let blob = &data[blob_start as usize..];
        let found = hex_digest(blob);
        if found != manifest.sha256 {
            return Err(ContainerError::Checksum { expected: manifest.sha256, found });
        }
        let mut tensors = BTreeMap::new();
        for e in &manifest.tensors {
            let end = e.offset.checked_add(e.bytes).filter(|&end| end <= manifest.blob_bytes).ok_or_else(|| {
                ContainerError::Manifest(format!("tensor `{}` lies outside the blob", e.name))
            })?;
            let elements: usize = e.shape.iter().product();
            if elements * e.dtype.size_bytes() != e.bytes as usize {
                return Err(ContainerError::Manifest(format!(
                    "tensor `{}`: shape {:?} of {} needs {} bytes, manifest says {}",
                    e.name,
                    e.shape,
                    e.dtype,
                    elements * e.dtype.size_bytes(),
                    e.bytes
                )));
            }
            let payload = TensorData::from_le_bytes(e.dtype, &blob[e.offset as usize..end as usize])
                .map_err(|err| ContainerError::Manifest(err.to_string()))?;
            let t = Tensor::new(e.shape.clone(), payload, e.quant).map_err(|err| ContainerError::Manifest(err.to_string()))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(ContainerError::Manifest(format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Self { tensors, metadata: manifest.metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&data)
    }
}

/// Writes a single tensor under the name `tensor`.
pub fn emit_tensor_container(tensor: &Tensor, path: &Path) -> Result<()> {
    let mut c = Container::new(serde_json::Value::Null);
    c.insert("tensor", tensor.clone());
    c.write(path)
}

pub fn read_tensor_container(path: &Path) -> Result<Tensor> {
    Container::read(path)?.get("tensor").cloned()
}

/// A model file is a container whose metadata holds the graph and whose
/// tensors are the weights.
pub fn model_to_container(graph: &ModelGraph) -> Container {
    let graph_json = serde_json::to_value(graph).expect("graph serialises");
    let mut c = Container::new(serde_json::json!({ "kind": "model", "graph": graph_json }));
    for (name, t) in &graph.weights {
        c.insert(name.clone(), t.clone());
    }
    c
}

/// Rebuilds a graph, checking every referenced weight is present with the
/// shape the graph needs.
pub fn model_from_container(c: Container) -> Result<ModelGraph> {
    let graph_json = c.metadata.get("graph").cloned().ok_or_else(|| ContainerError::Manifest("no model graph in metadata".into()))?;
    let mut graph: ModelGraph = serde_json::from_value(graph_json).map_err(|e| ContainerError::Manifest(format!("model graph: {e}")))?;
    let mut tensors = c.tensors;
    for node in &graph.nodes {
        for p in &node.params {
            if !tensors.contains_key(p) {
                return Err(ContainerError::MissingTensor(p.clone()));
            }
        }
    }
    graph.weights = std::mem::take(&mut tensors);
    graph.check().map_err(|e| ContainerError::Manifest(format!("model graph: {e}")))?;
    Ok(graph)
}

pub fn save_model(graph: &ModelGraph, path: &Path) -> Result<()> {
    model_to_container(graph).write(path)
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    model_from_container(Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(serde_json::json!({"k": 1}));
        c.insert("a", Tensor::from_f32(vec![2, 3], (0..6).map(|i| i as f32 * 0.5).collect()).unwrap());
        let qp = QuantParams::from_range(-1.0, 2.0);
        c.insert("b", Tensor::from_i8(vec![4], vec![-128, 0, 5, 127], qp).unwrap());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(Container::from_bytes(&flipped), Err(ContainerError::Checksum { .. })));
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 3]), Err(ContainerError::Truncated { .. })));
        assert!(matches!(Container::from_bytes(&bytes[..10]), Err(ContainerError::Truncated { .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(Container::from_bytes(&bad), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn expectations() {
        let c = sample();
        assert!(c.expect("a", &[2, 3], DType::F32).is_ok());
        assert!(matches!(c.expect("a", &[3, 2], DType::F32), Err(ContainerError::ShapeMismatch { .. })));
        assert!(matches!(c.expect("b", &[4], DType::F32), Err(ContainerError::DTypeMismatch { .. })));
        assert!(matches!(c.expect("zzz", &[1], DType::F32), Err(ContainerError::MissingTensor(_))));
    }
}
