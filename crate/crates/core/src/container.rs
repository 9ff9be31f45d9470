//! Binary container shared by tensors, label grids and weight bundles.
//!
//! Layout: a single line of JSON (the manifest) terminated by `\n`, followed
//! by the raw little-endian payload of every entry, back to back, in manifest
//! order. Each entry records its dtype, shape, byte offset into the payload,
//! byte length and a SHA-256 of its bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "pgmfuse";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub entries: Vec<Entry>,
}

/// In-memory form of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    entries: Vec<Entry>,
    payload: Vec<u8>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn push_raw(&mut self, name: &str, dtype: DType, shape: &[usize], bytes: Vec<u8>) {
        let entry = Entry {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset: self.payload.len() as u64,
            nbytes: bytes.len() as u64,
            sha256: digest(&bytes),
        };
        self.payload.extend_from_slice(&bytes);
        self.entries.push(entry);
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_raw(name, DType::F32, shape, bytes);
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_raw(name, DType::F64, shape, bytes);
    }

    pub fn push_u8(&mut self, name: &str, shape: &[usize], data: &[u8]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push_raw(name, DType::U8, shape, data.to_vec());
    }

    fn lookup(&self, name: &str, dtype: DType) -> Result<(&Entry, &[u8])> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(format!("container has no entry named '{name}'")))?;
        if entry.dtype != dtype {
            return Err(Error::format(format!(
                "entry '{name}' has dtype {:?}, expected {dtype:?}",
                entry.dtype
            )));
        }
        let start = entry.offset as usize;
        Ok((entry, &self.payload[start..start + entry.nbytes as usize]))
    }

    pub fn get_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let (entry, bytes) = self.lookup(name, DType::F32)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((entry.shape.clone(), data))
    }

    pub fn get_f64(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (entry, bytes) = self.lookup(name, DType::F64)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok((entry.shape.clone(), data))
    }

    pub fn get_u8(&self, name: &str) -> Result<(Vec<usize>, Vec<u8>)> {
        let (entry, bytes) = self.lookup(name, DType::U8)?;
        Ok((entry.shape.clone(), bytes.to_vec()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            entries: self.entries.clone(),
        };
        // serde_json never emits raw newlines in compact mode.
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse and fully validate a container: layout, shapes and checksums.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("missing manifest line"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::format(format!("bad manifest: {e}")))?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::format(format!(
                "unknown container format '{}'",
                manifest.format
            )));
        }
        if manifest.version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported container version {}",
                manifest.version
            )));
        }
        let payload = &bytes[split + 1..];
        let mut expected_offset = 0u64;
        for entry in &manifest.entries {
            let elems: usize = entry.shape.iter().product();
            let want = (elems * entry.dtype.size()) as u64;
            if entry.nbytes != want {
                return Err(Error::format(format!(
                    "entry '{}' declares shape {:?} ({want} bytes) but {} payload bytes",
                    entry.name, entry.shape, entry.nbytes
                )));
            }
            if entry.offset != expected_offset {
                return Err(Error::format(format!(
                    "entry '{}' has non-contiguous offset {}",
                    entry.name, entry.offset
                )));
            }
            expected_offset += entry.nbytes;
        }
        if expected_offset != payload.len() as u64 {
            return Err(Error::format(format!(
                "payload is {} bytes, manifest accounts for {expected_offset}",
                payload.len()
            )));
        }
        for entry in &manifest.entries {
            let start = entry.offset as usize;
            let got = digest(&payload[start..start + entry.nbytes as usize]);
            if got != entry.sha256 {
                return Err(Error::Integrity(format!(
                    "checksum mismatch in entry '{}'",
                    entry.name
                )));
            }
        }
        Ok(Container {
            kind: manifest.kind,
            meta: manifest.meta,
            entries: manifest.entries,
            payload: payload.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Ensure the container holds the expected kind of object.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(format!(
                "container holds '{}', expected '{kind}'",
                self.kind
            )));
        }
        Ok(())
    }
}
