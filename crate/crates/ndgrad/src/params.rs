//! Named, ordered parameter collections and the checkpoint file format.
//!
//! A checkpoint is one line of compact JSON (the header) terminated by
//! `\n`, followed by the raw little-endian `f64` payloads of every
//! parameter in header order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NdError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "ndgrad-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (`false`) are carried and averaged but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NdError::Invalid(format!("duplicate parameter name {name}")));
        }
        let slot = self.entries.len();
        self.index.insert(name.clone(), slot);
        self.entries.push(ParamEntry { name, value, trainable });
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry {
        &self.entries[slot]
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.entries[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.entries[slot].value
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.entries[s].value)
    }

    /// Replaces a value, keeping the shape fixed.
    pub fn set_value(&mut self, slot: usize, value: Tensor) -> Result<()> {
        let e = &mut self.entries[slot];
        if e.value.shape() != value.shape() {
            return Err(NdError::Shape {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", e.name, e.value.shape(), value.shape()),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.entries.iter().map(|e| e.value.shape()).collect()
    }

    /// Total scalar count over every entry, buffers included.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Same names, order, shapes and trainable flags.
    pub fn compatible_with(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape() && a.trainable == b.trainable)
    }

    /// Bitwise equality of all values (names and shapes included).
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.compatible_with(other)
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn to_bytes(&self, meta: &serde_json::Value) -> Result<Vec<u8>> {
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dtype: "f64le".into(),
            params: self
                .entries
                .iter()
                .map(|e| HeaderParam {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    trainable: e.trainable,
                })
                .collect(),
            meta: meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.total_scalars() * 8);
        for e in &self.entries {
            for x in e.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NdError::Checkpoint("missing header terminator".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(NdError::Checkpoint(format!("unknown format {}", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(NdError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        if header.dtype != "f64le" {
            return Err(NdError::Checkpoint(format!("unsupported dtype {}", header.dtype)));
        }
        let mut payload = &bytes[nl + 1..];
        let mut set = ParamSet::new();
        for p in header.params {
            let n: usize = p.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(NdError::Checkpoint(format!("payload truncated at {}", p.name)));
            }
            let data = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            payload = &payload[n * 8..];
            set.push(p.name, Tensor::new(p.shape, data)?, p.trainable)?;
        }
        if !payload.is_empty() {
            return Err(NdError::Checkpoint(format!("{} trailing bytes", payload.len())));
        }
        Ok((set, header.meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &serde_json::Value) -> Result<()> {
        let bytes = self.to_bytes(meta)?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(ParamSet, serde_json::Value)> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    params: Vec<HeaderParam>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct HeaderParam {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}
