//! HSIC: a minimal little-endian container for `H x W x C` cubes.
//!
//! Layout (21-byte header, then the payload):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `HSIC`                  |
//! | 4      | 2    | version (`1`)                 |
//! | 6      | 12   | `H`, `W`, `C` as `u32`        |
//! | 18     | 1    | dtype (`1` = `f32`)           |
//! | 19     | 2    | reserved, zero                |
//!
//! The payload holds `H * W * C` `f32` values band by band, each band
//! row-major.

use std::fs;
use std::path::Path;

use crate::cube::HsiCube;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSIC";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 21;

pub fn encode(cube: &HsiCube) -> Vec<u8> {
    let (h, w, c) = cube.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * h * w * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0, 0]);
    for b in 0..c {
        for p in 0..h * w {
            out.extend_from_slice(&(cube.data()[p * c + b] as f32).to_le_bytes());
        }
    }
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"HSIC\"", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(6), dim(10), dim(14));
    if h == 0 || w == 0 || c == 0 {
        return Err(format_err(6, format!("zero dimension in {h}x{w}x{c}")));
    }
    if bytes[18] != DTYPE_F32 {
        return Err(format_err(18, format!("unsupported dtype code {}", bytes[18])));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| format_err(6, "dimensions overflow"))?;
    let expected = 4 * n;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(format_err(
            HEADER_LEN,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let mut data = vec![0.0; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let (b, p) = (k / (h * w), k % (h * w));
        data[p * c + b] = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    HsiCube::new(h, w, c, data)
}

pub fn write_hsic(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(cube))?;
    Ok(())
}

pub fn read_hsic(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode(&fs::read(path)?)
}

/// Reads a cube and scales it to unit peak magnitude.
pub fn read_hsic_normalized(path: impl AsRef<Path>) -> Result<HsiCube> {
    Ok(read_hsic(path)?.normalized())
}
