//! Middlebury `.flo`: "PIEH", i32 width, i32 height, then interleaved (u, v)
//! f32 pairs, all little-endian, row-major.

use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

const TAG: &[u8; 4] = b"PIEH";

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Format(".flo file shorter than its header".into()));
    }
    if &bytes[..4] != TAG {
        return Err(Error::Format(format!(
            "bad .flo tag {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::Format(format!(
            "invalid .flo dimensions {width}x{height}"
        )));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format(".flo dimensions overflow".into()))?;
    let body = &bytes[12..];
    if body.len() != n * 8 {
        return Err(Error::Format(format!(
            ".flo payload is {} bytes, header declares {}",
            body.len(),
            n * 8
        )));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for pair in body.chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    FlowField::new(width, height, u, v)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.u.len() * 8);
    out.extend_from_slice(TAG);
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_flow_field(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode_flo(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_flow_field(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    super::write_atomic(path, &encode_flo(flow))
}
