//! Serialized-weights container shared by the feature extractor, model
//! checkpoints, and trained predictors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "PEWTv1\0\0"
//! count    u32       number of entries
//! entry*   repeated:
//!   name_len u32
//!   name     utf-8 bytes
//!   dtype    u8       1 = f32, 2 = f64
//!   ndim     u8
//!   dims     u64 * ndim
//!   data     dtype scalars, row-major
//! ```
//!
//! Entries keep insertion order; readers look up by name and ignore entries
//! they do not know, which gives prefix semantics for truncated networks.

use crate::errors::{Error, Result};
use crate::nn::Scalar;
use ndarray::{Array, ArrayD, Dimension};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PEWTv1\0\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Values widened to f64 (exact for both supported dtypes).
    pub values: Vec<f64>,
}

/// An ordered name -> tensor map. See module docs for the byte layout.
#[derive(Debug, Clone, Default)]
pub struct WeightsContainer {
    entries: Vec<(String, WeightEntry)>,
}

impl WeightsContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add<F: Scalar, D: Dimension>(&mut self, name: &str, array: &Array<F, D>) {
        let entry = WeightEntry {
            dtype: F::dtype(),
            shape: array.shape().to_vec(),
            values: array.iter().map(|v| v.tof64()).collect(),
        };
        self.entries.push((name.to_string(), entry));
    }

    pub fn entry(&self, name: &str) -> Option<&WeightEntry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
    }

    /// Fetches `name` as an array of the requested shape, widening or
    /// narrowing the element type as needed.
    pub fn get<F: Scalar, D: Dimension>(
        &self,
        path: &Path,
        name: &str,
        expected_shape: &[usize],
    ) -> Result<Array<F, D>> {
        let entry = self.entry(name).ok_or_else(|| Error::Weights {
            path: path.to_path_buf(),
            msg: format!("missing entry {name:?}"),
        })?;
        if entry.shape != expected_shape {
            return Err(Error::Weights {
                path: path.to_path_buf(),
                msg: format!(
                    "shape mismatch for {name:?}: expected {expected_shape:?}, found {:?}",
                    entry.shape
                ),
            });
        }
        let data: Vec<F> = entry.values.iter().map(|&v| F::fromf64(v)).collect();
        let arr = ArrayD::from_shape_vec(entry.shape.clone(), data).map_err(|e| Error::Weights {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        arr.into_dimensionality().map_err(|e| Error::Weights {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(entry.dtype.tag());
            out.push(entry.shape.len() as u8);
            for &d in &entry.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match entry.dtype {
                Dtype::F32 => {
                    for &v in &entry.values {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                Dtype::F64 => {
                    for &v in &entry.values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let err = |msg: String| Error::Weights {
            path: path.to_path_buf(),
            msg,
        };
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)
            .map_err(|e| err(e.to_string()))?;
        if &magic != MAGIC {
            return Err(err("bad magic; not a weights container".into()));
        }
        let mut buf4 = [0u8; 4];
        cur.read_exact(&mut buf4).map_err(|e| err(e.to_string()))?;
        let count = u32::from_le_bytes(buf4);
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            cur.read_exact(&mut buf4).map_err(|e| err(e.to_string()))?;
            let name_len = u32::from_le_bytes(buf4) as usize;
            let mut name_buf = vec![0u8; name_len];
            cur.read_exact(&mut name_buf)
                .map_err(|e| err(e.to_string()))?;
            let name = String::from_utf8(name_buf).map_err(|e| err(e.to_string()))?;
            let mut b1 = [0u8; 1];
            cur.read_exact(&mut b1).map_err(|e| err(e.to_string()))?;
            let dtype = Dtype::from_tag(b1[0])
                .ok_or_else(|| err(format!("unknown dtype tag {}", b1[0])))?;
            cur.read_exact(&mut b1).map_err(|e| err(e.to_string()))?;
            let ndim = b1[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut buf8 = [0u8; 8];
            for _ in 0..ndim {
                cur.read_exact(&mut buf8).map_err(|e| err(e.to_string()))?;
                shape.push(u64::from_le_bytes(buf8) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            match dtype {
                Dtype::F32 => {
                    for _ in 0..numel {
                        cur.read_exact(&mut buf4).map_err(|e| err(e.to_string()))?;
                        values.push(f32::from_le_bytes(buf4) as f64);
                    }
                }
                Dtype::F64 => {
                    for _ in 0..numel {
                        cur.read_exact(&mut buf8).map_err(|e| err(e.to_string()))?;
                        values.push(f64::from_le_bytes(buf8));
                    }
                }
            }
            entries.push((name, WeightEntry { dtype, shape, values }));
        }
        Ok(WeightsContainer { entries })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    /// Hash of the canonical byte encoding; used for frozen-weights checks.
    pub fn sha256_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use std::path::PathBuf;

    #[test]
    fn roundtrip_preserves_values_and_order() {
        let mut c = WeightsContainer::new();
        c.add("a.weight", &array![[1.0f32, 2.0], [3.0, 4.0]]);
        c.add("a.bias", &array![0.5f64, -0.5]);
        let bytes = c.to_bytes();
        let back = WeightsContainer::from_bytes(&PathBuf::from("mem"), &bytes).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a.weight", "a.bias"]);
        let w: Array2<f32> = back
            .get(&PathBuf::from("mem"), "a.weight", &[2, 2])
            .unwrap();
        assert_eq!(w, array![[1.0f32, 2.0], [3.0, 4.0]]);
        assert_eq!(c.sha256_hex(), back.sha256_hex());
    }

    #[test]
    fn shape_mismatch_is_reported_with_both_shapes() {
        let mut c = WeightsContainer::new();
        c.add("w", &array![[1.0f32, 2.0]]);
        let e = c
            .get::<f32, ndarray::Ix2>(&PathBuf::from("mem"), "w", &[2, 1])
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("[2, 1]") && msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let e = WeightsContainer::from_bytes(&PathBuf::from("mem"), b"NOTMAGIC\0\0\0\0");
        assert!(e.is_err());
    }
}
