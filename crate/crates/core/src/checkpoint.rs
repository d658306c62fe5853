//! CPKT container.
//!
//! Layout (little-endian): `"CPKT"` | u32 version | u32 json_len | JSON header |
//! per parameter, in canonical model order: u32 name_len | UTF-8 name |
//! u32 rank | u32 dims\[rank\] | f32 values.

use std::fs;
use std::path::Path;

use crate::error::{FormatError, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CPKT";
pub const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON describing how to rebuild and use the parameters.
    pub header: serde_json::Value,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(header: serde_json::Value, model: &Model<T>) -> Self {
        let params = model
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f32>()))
            .collect();
        Self { header, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            }
            .into());
        }
        let mut r = Reader { bytes, at: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let json_len = r.u32()? as usize;
        let header = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| FormatError::Metadata(format!("checkpoint header: {e}")))?;
        let mut params = Vec::new();
        while r.at < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| FormatError::Metadata(format!("parameter name: {e}")))?
                .to_string();
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(FormatError::Metadata(format!("{name}: rank {rank}")).into());
            }
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| FormatError::SizeOverflow(format!("{name}: shape {shape:?}")))?;
            let data: Vec<f32> = r
                .take(count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite(i as u64).into());
            }
            let t = Tensor::new(&shape, data)
                .map_err(|e| FormatError::Metadata(format!("{name}: {e}")))?;
            params.push((name, t));
        }
        Ok(Self { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn load_into<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        model.load_parameters(&self.params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated {
                expected: self.at as u64 + n as u64,
                actual: self.bytes.len() as u64,
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
