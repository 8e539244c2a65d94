//! The ICT tensor file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ICT1" (0x49 0x43 0x54 0x31)
//! 4       1           dtype code, 0x01 = binary32
//! 5       1           ndim
//! 6       4 * ndim    dims, u32 little-endian
//! ...     4 * volume  payload, row-major f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::tensor::{checked_volume, Tensor};

pub const MAGIC: [u8; 4] = *b"ICT1";
pub const DTYPE_F32: u8 = 0x01;

/// Largest payload a decoder will accept (2^30 elements), so a forged
/// header cannot request an absurd allocation.
pub const MAX_ELEMENTS: usize = 1 << 30;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32);
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(CoreError::MalformedMagic(bytes.to_vec()));
    }
    if bytes[..4] != MAGIC {
        return Err(CoreError::MalformedMagic(bytes[..4].to_vec()));
    }
    if bytes.len() < 6 {
        return Err(CoreError::TruncatedHeader);
    }
    if bytes[4] != DTYPE_F32 {
        return Err(CoreError::UnsupportedDtype(bytes[4]));
    }
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err(CoreError::InvalidDims(vec![]));
    }
    let header_len = 6 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(CoreError::TruncatedHeader);
    }
    let dims: Vec<usize> = bytes[6..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(CoreError::InvalidDims(dims));
    }
    let volume = match checked_volume(&dims) {
        Some(v) if v <= MAX_ELEMENTS => v,
        _ => return Err(CoreError::DimOverflow),
    };
    let payload = &bytes[header_len..];
    let expected = volume * 4;
    if payload.len() < expected {
        return Err(CoreError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CoreError::TrailingBytes(payload.len() - expected));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| CoreError::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_tensor(&bytes)
}
