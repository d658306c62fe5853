//! CPSD container.
//!
//! Layout (little-endian): `"CPSD"` | u32 version | u64 T | u64 G | u32 f_in |
//! u32 f_out | inputs f32 `[T][G][f_in]` | targets f32 `[T][G][f_out]`.
//! Metadata lives in a JSON sidecar at `<path>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetMeta, DatasetTensor};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"CPSD";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 32;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_dataset_bytes(d: &DatasetTensor) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(HEADER_LEN as usize + 4 * (d.inputs().len() + d.targets().len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.n_time() as u64).to_le_bytes());
    out.extend_from_slice(&(d.n_grid() as u64).to_le_bytes());
    out.extend_from_slice(&(d.f_in() as u32).to_le_bytes());
    out.extend_from_slice(&(d.f_out() as u32).to_le_bytes());
    for v in d.inputs().iter().chain(d.targets()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_dataset(d: &DatasetTensor, path: &Path) -> Result<()> {
    fs::write(path, write_dataset_bytes(d))?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&d.meta)?)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn decode_f32(bytes: &[u8], first_index: u64) -> Result<Vec<f32>> {
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::NonFinite(first_index + i as u64).into())
            }
        })
        .collect()
}

/// Parses a CPSD payload with externally supplied metadata.
pub fn read_dataset_bytes(bytes: &[u8], meta: DatasetMeta) -> Result<DatasetTensor> {
    let actual = bytes.len() as u64;
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        }
        .into());
    }
    if actual < 8 {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            actual,
        }
        .into());
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    if actual < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            actual,
        }
        .into());
    }
    let n_time = u64_at(bytes, 8);
    let n_grid = u64_at(bytes, 16);
    let f_in = u32_at(bytes, 24) as u64;
    let f_out = u32_at(bytes, 28) as u64;
    let overflow =
        || FormatError::SizeOverflow(format!("T={n_time} G={n_grid} f_in={f_in} f_out={f_out}"));
    let cells = n_time.checked_mul(n_grid).ok_or_else(overflow)?;
    let n_in = cells.checked_mul(f_in).ok_or_else(overflow)?;
    let n_out = cells.checked_mul(f_out).ok_or_else(overflow)?;
    let expected = n_in
        .checked_add(n_out)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(overflow)?;
    if actual < expected {
        return Err(FormatError::Truncated { expected, actual }.into());
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes(actual - expected).into());
    }
    let split = (HEADER_LEN + 4 * n_in) as usize;
    let inputs = decode_f32(&bytes[HEADER_LEN as usize..split], 0)?;
    let targets = decode_f32(&bytes[split..], n_in)?;
    DatasetTensor::new(n_time as usize, n_grid as usize, inputs, targets, meta).map_err(|e| match e
    {
        Error::Config(msg) | Error::Contract(msg) => FormatError::Metadata(msg).into(),
        other => other,
    })
}

pub fn read_dataset(path: &Path) -> Result<DatasetTensor> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let meta_bytes = fs::read(&side)?;
    let meta: DatasetMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| FormatError::Metadata(format!("{}: {e}", side.display())))?;
    read_dataset_bytes(&bytes, meta)
}
