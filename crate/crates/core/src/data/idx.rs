//! IDX container: big-endian magic, big-endian `u32` dimension sizes, raw
//! unsigned bytes. Gzip-compressed files are recognised by their header and
//! inflated transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const UBYTE: u8 = 0x08;

fn header(bytes: &[u8]) -> Result<(u32, Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "IDX stream too short for a magic number ({} bytes)",
            bytes.len()
        )));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || bytes[3] == 0 {
        return Err(Error::Format(format!("bad IDX magic 0x{magic:08x}")));
    }
    let ndim = bytes[3] as usize;
    let head = 4 + 4 * ndim;
    if bytes.len() < head {
        return Err(Error::Format(format!(
            "IDX header truncated: expected {head} bytes, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[head..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "IDX payload: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    Ok((magic, dims, payload))
}

/// Parses an unsigned-byte IDX stream into a tensor with the declared
/// dimensions, mapping bytes to `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let (_, dims, payload) = header(bytes)?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(dims, data)
}

/// Parses a one-dimensional IDX label stream.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (magic, _, payload) = header(bytes)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "expected label magic 0x{LABELS_MAGIC:08x}, got 0x{magic:08x}"
        )));
    }
    Ok(payload.to_vec())
}

fn write_header(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    let ndim = u8::try_from(dims.len())
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("cannot write {} dimensions to IDX", dims.len())))?;
    out.extend_from_slice(&[0, 0, UBYTE, ndim]);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Usage(format!("dimension {d} too large for IDX")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    Ok(())
}

/// Inverse of [`parse_idx`]: values are rounded back to bytes.
pub fn serialize_idx(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + 4 * t.ndim() + t.len());
    write_header(&mut out, t.shape())?;
    for &v in t.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn serialize_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    write_header(&mut out, &[labels.len()])?;
    out.extend_from_slice(labels);
    Ok(out)
}

/// Reads a file, inflating it when it is gzip compressed.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::Path {
        path: path.display().to_string(),
        hint: e.to_string(),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}
