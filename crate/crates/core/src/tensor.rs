//! Portable tensor container.
//!
//! Layout: one UTF-8 JSON header line
//! `{"tensors": [{"name", "shape", "offset", "dtype": "f32le"}...], "meta": {...}}`
//! terminated by `\n`, followed by a raw little-endian `f32` payload. Offsets
//! are byte offsets into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::invalid(format!(
                "tensor {name}: shape {shape:?} holds {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<Tensor>,
    pub meta: Value,
}

impl TensorFile {
    pub fn new(tensors: Vec<Tensor>, meta: Value) -> Self {
        Self { tensors, meta }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = Entry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    dtype: DTYPE_F32LE.into(),
                };
                offset += t.data.len() * 4;
                e
            })
            .collect();
        let header = Header {
            tensors: entries,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], context: &str) -> Result<Self> {
        let parse_err = |msg: String| Error::Parse {
            context: context.to_string(),
            msg,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err("missing header terminator".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| parse_err(e.to_string()))?;
        let payload = &bytes[nl + 1..];

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.dtype != DTYPE_F32LE {
                return Err(parse_err(format!("tensor {}: dtype {} unsupported", e.name, e.dtype)));
            }
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| parse_err(format!("tensor {}: shape overflows", e.name)))?;
            let end = count
                .checked_mul(4)
                .and_then(|n| n.checked_add(e.offset))
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| parse_err(format!("tensor {}: payload out of range", e.name)))?;
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.iter().any(|t: &Tensor| t.name == e.name) {
                return Err(parse_err(format!("duplicate tensor {}", e.name)));
            }
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}
