//! IDX container parsing (the MNIST file format).
//!
//! Layout: two zero bytes, a dtype byte, a dimension-count byte, then one
//! big-endian `u32` per dimension followed by the big-endian payload.
//! Gzip-compressed files are detected by their magic and inflated first.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("not an IDX file (bad magic)")]
    BadMagic,
    #[error("unsupported IDX dtype 0x{0:02x}")]
    UnsupportedType(u8),
    #[error("expected {expected} dimensions, found {found}")]
    WrongRank { expected: usize, found: usize },
    #[error("payload truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DTYPE_U8: u8 = 0x08;
pub const DTYPE_F32: u8 = 0x0d;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            IdxData::U8(v) => v.iter().map(|&b| b as f32).collect(),
            IdxData::F32(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

fn maybe_inflate(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, IdxError> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parses an IDX buffer.
pub fn parse(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    let bytes = maybe_inflate(bytes)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::BadMagic);
    }
    let dtype = bytes[2];
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            need: header,
            have: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    let data = match dtype {
        DTYPE_U8 => {
            if payload.len() < count {
                return Err(IdxError::Truncated {
                    need: header + count,
                    have: bytes.len(),
                });
            }
            IdxData::U8(payload[..count].to_vec())
        }
        DTYPE_F32 => {
            if payload.len() < 4 * count {
                return Err(IdxError::Truncated {
                    need: header + 4 * count,
                    have: bytes.len(),
                });
            }
            IdxData::F32(
                payload[..4 * count]
                    .chunks_exact(4)
                    .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        other => return Err(IdxError::UnsupportedType(other)),
    };
    Ok(IdxArray { dims, data })
}

pub fn read(path: &Path) -> Result<IdxArray, IdxError> {
    parse(&std::fs::read(path)?)
}

/// Parses and checks the rank.
pub fn parse_rank(bytes: &[u8], rank: usize) -> Result<IdxArray, IdxError> {
    let arr = parse(bytes)?;
    if arr.dims.len() != rank {
        return Err(IdxError::WrongRank {
            expected: rank,
            found: arr.dims.len(),
        });
    }
    Ok(arr)
}

/// Serializes an array (uncompressed).
pub fn encode(arr: &IdxArray) -> Vec<u8> {
    let dtype = match arr.data {
        IdxData::U8(_) => DTYPE_U8,
        IdxData::F32(_) => DTYPE_F32,
    };
    let mut out = vec![0, 0, dtype, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match &arr.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
    }
    out
}
