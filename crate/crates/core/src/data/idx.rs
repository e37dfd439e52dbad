//! Reader for the IDX binary format (big-endian magic, dims, raw payload).

use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parse an IDX file holding unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let fmt = |offset: usize, msg: String| Error::Format { offset, msg };
    if bytes.len() < 4 {
        return Err(fmt(bytes.len(), "file shorter than the 4-byte magic".into()));
    }
    for (i, &b) in bytes[..2].iter().enumerate() {
        if b != 0 {
            return Err(fmt(i, format!("magic byte {i} must be 0, got {b:#04x}")));
        }
    }
    if bytes[2] != UBYTE {
        return Err(fmt(2, format!("unsupported element type {:#04x}, expected unsigned byte", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(fmt(3, "zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(fmt(bytes.len(), format!("truncated header: {ndim} dims need {header} bytes")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let off = 4 + 4 * d;
        let v = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if v == 0 {
            return Err(fmt(off, format!("dimension {d} is zero")));
        }
        dims.push(v);
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fmt(4, "dimension product overflows".into()))?;
    let payload = bytes.len() - header;
    if payload != expected {
        return Err(fmt(
            header + payload.min(expected),
            format!("payload has {payload} bytes but dims {dims:?} need {expected}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Encode unsigned bytes as IDX; used to craft fixtures.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
