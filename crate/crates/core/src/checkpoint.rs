//! Single-file tensor archives.
//!
//! The layout is the safetensors container: an 8-byte little-endian header
//! length, a JSON header mapping each tensor name to its dtype, shape and
//! byte range, then the raw little-endian data. String metadata (model
//! config, format version, training provenance) lives under `__metadata__`.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format { what: "tensor archive", message: message.into() }
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), Tensor { shape, data });
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn metadata_map(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            header.insert("__metadata__".into(), json!(self.metadata));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let len = t.data.len() * 8;
            header.insert(
                name.clone(),
                json!({ "dtype": "F64", "shape": t.shape, "data_offsets": [offset, offset + len] }),
            );
            offset += len;
        }
        let mut head = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        while head.len() % 8 != 0 {
            head.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + head.len() + offset);
        out.extend_from_slice(&(head.len() as u64).to_le_bytes());
        out.extend_from_slice(&head);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(malformed("truncated header length"));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body_start = 8usize.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| malformed("header overruns file"))?;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[8..body_start])?;
        let body = &bytes[body_start..];
        let mut archive = TensorArchive::new();
        for (name, entry) in header {
            if name == "__metadata__" {
                let meta: BTreeMap<String, String> = serde_json::from_value(entry)?;
                archive.metadata = meta;
                continue;
            }
            let dtype = entry["dtype"].as_str().ok_or_else(|| malformed(format!("`{name}` lacks dtype")))?;
            let shape: Vec<usize> = serde_json::from_value(entry["shape"].clone())?;
            let offs: [usize; 2] = serde_json::from_value(entry["data_offsets"].clone())?;
            let raw = body.get(offs[0]..offs[1]).ok_or_else(|| malformed(format!("`{name}` data out of range")))?;
            let data: Vec<f64> = match dtype {
                "F64" => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                "F32" => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                other => return Err(malformed(format!("unsupported dtype {other} for `{name}`"))),
            };
            if data.len() != shape.iter().product::<usize>() {
                return Err(malformed(format!("`{name}` size does not match shape {shape:?}")));
            }
            archive.tensors.insert(name, Tensor { shape, data });
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
