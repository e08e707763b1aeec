//! Single-file tensor archive used for checkpoints and backbone weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TPAR" | u32 version | u64 header_len | header (UTF-8 JSON) | f64 data
//! ```
//!
//! The header is `{"metadata": <json>, "tensors": [{"name", "shape", "offset"}]}`
//! where `offset` counts `f64` elements from the start of the data section.
//! Tensors are stored row-major in name order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use tripath_autograd::Tensor;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TPAR";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self { metadata, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += t.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header { metadata: self.metadata.clone(), tensors: entries })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.as_standard_layout().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a tensor archive"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported archive version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16 + hlen;
        if bytes.len() < data_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset * 8;
            let end = start + n * 8;
            if end > data.len() {
                return Err(bad(&format!("truncated data for `{}`", e.name)));
            }
            let vals: Vec<f64> = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&e.shape), vals).map_err(|err| bad(&err.to_string()))?;
            tensors.insert(e.name, t);
        }
        Ok(Self { metadata: header.metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(vals.len());
            let mut a = TensorArchive::new(serde_json::json!({"k": 1}));
            a.insert("b.second", ArrayD::from_shape_vec(IxDyn(&[vals.len() - split]), vals[split..].to_vec()).unwrap());
            a.insert("a.first", ArrayD::from_shape_vec(IxDyn(&[split]), vals[..split].to_vec()).unwrap());
            let back = TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.metadata, a.metadata);
            prop_assert_eq!(back.tensors, a.tensors);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(TensorArchive::from_bytes(b"nope").is_err());
        assert!(TensorArchive::from_bytes(b"TPAR\x02\0\0\0\0\0\0\0\0\0\0\0").is_err());
    }
}
