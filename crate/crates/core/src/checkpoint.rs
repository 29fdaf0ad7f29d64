//! Binary matrix checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` rows, `u64` cols, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub const ENCODER_MAGIC: [u8; 8] = *b"XCMENC\0\0";
pub const CLASSIFIER_MAGIC: [u8; 8] = *b"XCMCLS\0\0";
pub const INDEX_MAGIC: [u8; 8] = *b"XCMIDX\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn encode_matrix(magic: [u8; 8], rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(rows * cols, data.len());
    let mut buf = Vec::with_capacity(28 + 4 * data.len());
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf
}

pub fn decode_matrix(magic: [u8; 8], mut bytes: &[u8]) -> Result<MatrixRecord> {
    let mut head = [0u8; 28];
    bytes
        .read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint truncated in header".into()))?;
    if head[..8] != magic {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}",
            String::from_utf8_lossy(&head[..8])
        )));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let rows = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[20..28].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint body has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect::<Vec<_>>();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Value("checkpoint contains non-finite values".into()));
    }
    Ok(MatrixRecord { rows, cols, data })
}

pub fn save_matrix(
    path: impl AsRef<Path>,
    magic: [u8; 8],
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_matrix(magic, rows, cols, data))?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>, magic: [u8; 8]) -> Result<MatrixRecord> {
    let bytes = fs::read(path)?;
    decode_matrix(magic, &bytes)
}
