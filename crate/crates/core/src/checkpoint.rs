//! Binary model bundles: magic, little-endian header length, a JSON header,
//! then every parameter as raw little-endian `f32` in module order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sixchan_nn::{Module, Param};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SIXCHAN\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    /// Free-form metadata describing the model.
    pub meta: Value,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

impl Bundle {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends every parameter of `module`, names prefixed with `prefix`.
    pub fn push_module<M: Module<f32>>(&mut self, prefix: &str, module: &M) {
        for (name, p) in module.params() {
            self.tensors.push((
                TensorEntry {
                    name: format!("{prefix}/{name}"),
                    shape: p.shape.clone(),
                },
                p.value.clone(),
            ));
        }
    }

    /// Loads parameters written by [`Bundle::push_module`] into `module`,
    /// checking names and shapes.
    pub fn load_module<M: Module<f32>>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let lead = format!("{prefix}/");
        let mine: Vec<&(TensorEntry, Vec<f32>)> = self.tensors.iter().filter(|(e, _)| e.name.starts_with(&lead)).collect();
        let params: Vec<(String, &mut Param<f32>)> = module.params_mut();
        if mine.len() != params.len() {
            return Err(Error::Format {
                offset: 0,
                message: format!("{prefix}: bundle has {} tensors, model expects {}", mine.len(), params.len()),
            });
        }
        for ((entry, values), (name, p)) in mine.into_iter().zip(params) {
            if entry.name[lead.len()..] != name || entry.shape != p.shape {
                return Err(Error::Format {
                    offset: 0,
                    message: format!(
                        "tensor {} {:?} does not match parameter {prefix}/{name} {:?}",
                        entry.name, entry.shape, p.shape
                    ),
                });
            }
            p.value.copy_from_slice(values);
            p.zero_grad();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.tensors.iter().map(|(_, v)| v.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in &self.tensors {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, message: &str| Error::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad(0, "not a model bundle"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad(8, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format {
            offset: 16 + crate::error::byte_offset(&String::from_utf8_lossy(body), e.line(), e.column()),
            message: e.to_string(),
        })?;
        let mut pos = 16 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| bad(pos, &format!("truncated tensor {}", entry.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            pos += 4 * n;
            tensors.push((entry, values));
        }
        if pos != bytes.len() {
            return Err(bad(pos, "trailing bytes after last tensor"));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
