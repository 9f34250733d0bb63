//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "COUGHCKP"
//! version    u32      1
//! config_len u64      followed by config_len bytes of UTF-8 JSON
//! count      u32      number of tensor records
//! record:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8       1 = f32
//!   ndim     u8, then ndim x u64 dims
//!   payload  prod(dims) x f32
//! ```

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"COUGHCKP";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on checkpoint {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Model configuration plus named f32 tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = u64::from_le_bytes(take(&mut r)?) as usize;
        let config_json = String::from_utf8(take_vec(&mut r, config_len)?).map_err(|_| malformed("config is not UTF-8"))?;
        let count = u32::from_le_bytes(take(&mut r)?);
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut r)?) as usize;
            let name = String::from_utf8(take_vec(&mut r, name_len)?).map_err(|_| malformed("tensor name is not UTF-8"))?;
            let [dtype] = take::<1>(&mut r)?;
            if dtype != DTYPE_F32 {
                return Err(malformed(format!("tensor {name}: unknown dtype {dtype}")));
            }
            let [ndim] = take::<1>(&mut r)?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut r)?) as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| malformed("tensor too large"))?;
            if numel.saturating_mul(4) > r.len() {
                return Err(malformed(format!("tensor {name}: truncated payload")));
            }
            let data = (0..numel).map(|_| take(&mut r).map(f32::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
            tensors.push((name, Tensor::new(&shape, data)));
        }
        if !r.is_empty() {
            return Err(malformed(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { config_json, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|_| malformed("unexpected end of file"))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn take_vec(r: &mut &[u8], len: usize) -> Result<Vec<u8>, CheckpointError> {
    if len > r.len() {
        return Err(malformed("unexpected end of file"));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_json: r#"{"attention":true}"#.into(),
            tensors: vec![
                ("conv1.weight".into(), Tensor::new(&[2, 1, 1, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0])),
                ("scalar".into(), Tensor::new(&[], vec![7.0])),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.tensor("conv1.weight").unwrap().data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"COUGHCKP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 18);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT0000"), Err(CheckpointError::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Malformed(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Malformed(_))));
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(2))));
    }
}
