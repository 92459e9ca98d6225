//! Named-tensor archive used for checkpoints and converted pretrained weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   "AFSRCKPT"
//! version     u32       1
//! manifest    u64 length, then that many bytes of UTF-8 JSON
//! data        concatenated raw little-endian tensor payloads
//! ```
//!
//! The manifest is `{"meta": {...}, "tensors": [{"name", "dtype", "shape",
//! "offset", "nbytes"}, ...]}` with tensors sorted by name and offsets relative
//! to the start of the data section. `meta` holds the step counter and the
//! configuration snapshot as an opaque JSON string.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AFSRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub step: u64,
    /// Serialized configuration snapshot, stored verbatim.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    meta: ArchiveMeta,
    tensors: Vec<TensorEntry>,
}

/// A raw tensor payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let bytes = match t.dtype() {
            DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self {
            dtype: t.dtype(),
            shape: t.dims().to_vec(),
            bytes,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let t = match self.dtype {
            DType::F32 => {
                let v: Vec<f32> = self
                    .bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), &Device::Cpu)?
            }
            DType::F64 => {
                let v: Vec<f64> = self
                    .bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), &Device::Cpu)?
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(t)
    }
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F64 => "f64",
        _ => "f32",
    }
}

fn parse_dtype(s: &str) -> Result<(DType, usize)> {
    match s {
        "f32" => Ok((DType::F32, 4)),
        "f64" => Ok((DType::F64, 8)),
        other => Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: ArchiveMeta,
    pub tensors: BTreeMap<String, RawTensor>,
}

impl Archive {
    pub fn insert(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.tensors.insert(name.into(), RawTensor::from_tensor(t)?);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .to_tensor()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype_name(t.dtype).to_string(),
                shape: t.shape.clone(),
                offset,
                nbytes: t.bytes.len() as u64,
            });
            offset += t.bytes.len() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            out.extend_from_slice(&t.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an archive (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(mlen)
            .ok_or_else(|| bad("manifest length overflow"))?;
        if bytes.len() < data_start {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let (dtype, size) = parse_dtype(&e.dtype)?;
            let count: usize = e.shape.iter().product();
            if e.nbytes as usize != count * size {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` size does not match its shape",
                    e.name
                )));
            }
            let start = e.offset as usize;
            let end = start + e.nbytes as usize;
            if end > data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` extends past end of file",
                    e.name
                )));
            }
            tensors.insert(
                e.name,
                RawTensor {
                    dtype,
                    shape: e.shape,
                    bytes: data[start..end].to_vec(),
                },
            );
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
