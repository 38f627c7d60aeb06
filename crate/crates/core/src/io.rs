//! Portable binary grid dumps and PGM previews.
//!
//! Layout: 4-byte magic (`LGRD` for feature grids, `LMSK` for masks), then
//! `u32` height, width and channel count, all little-endian, followed by the
//! values as little-endian `f64` in row-major `(h, w, c)` order. Masks always
//! declare one channel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Mask};
use crate::scalar::Scalar;

pub const GRID_MAGIC: &[u8; 4] = b"LGRD";
pub const MASK_MAGIC: &[u8; 4] = b"LMSK";
const HEADER_LEN: usize = 16;

fn encode(magic: &[u8; 4], h: usize, w: usize, c: usize, values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * c * 8);
    out.extend_from_slice(magic);
    for dim in [h, w, c] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Decoded {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

fn decode(kind: &'static str, magic: &[u8; 4], bytes: &[u8]) -> Result<Decoded> {
    let bad = |reason: String| Error::Format { kind, reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(bad(format!("magic {:?} is not {:?}", &bytes[..4], std::str::from_utf8(magic).unwrap())));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let expected = HEADER_LEN + height * width * channels * 8;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {height}x{width}x{channels}, found {}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Decoded { height, width, channels, values })
}

pub fn encode_grid<T: Scalar>(grid: &FeatureGrid<T>) -> Vec<u8> {
    let (h, w, c) = grid.shape();
    encode(GRID_MAGIC, h, w, c, grid.as_slice().iter().map(|v| v.as_f64()))
}

pub fn decode_grid<T: Scalar>(bytes: &[u8]) -> Result<FeatureGrid<T>> {
    let d = decode("LGRD", GRID_MAGIC, bytes)?;
    FeatureGrid::new(d.height, d.width, d.channels, d.values.into_iter().map(T::lit).collect())
}

pub fn encode_mask<T: Scalar>(mask: &Mask<T>) -> Vec<u8> {
    let (h, w) = mask.dims();
    encode(MASK_MAGIC, h, w, 1, mask.as_slice().iter().map(|v| v.as_f64()))
}

pub fn decode_mask<T: Scalar>(bytes: &[u8]) -> Result<Mask<T>> {
    let d = decode("LMSK", MASK_MAGIC, bytes)?;
    if d.channels != 1 {
        return Err(Error::Format { kind: "LMSK", reason: format!("mask declares {} channels", d.channels) });
    }
    Mask::new(d.height, d.width, d.values.into_iter().map(T::lit).collect())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_grid<T: Scalar>(path: impl AsRef<Path>, grid: &FeatureGrid<T>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_grid(grid))
}

pub fn read_grid<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureGrid<T>> {
    decode_grid(&read_bytes(path.as_ref())?)
}

pub fn write_mask<T: Scalar>(path: impl AsRef<Path>, mask: &Mask<T>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask))
}

pub fn read_mask<T: Scalar>(path: impl AsRef<Path>) -> Result<Mask<T>> {
    decode_mask(&read_bytes(path.as_ref())?)
}

/// Binary PGM (`P5`, maxval 255) of one channel, linearly mapping the
/// channel's `[min, max]` onto `[0, 255]`. A constant channel renders black.
pub fn encode_pgm<T: Scalar>(grid: &FeatureGrid<T>, channel: usize) -> Result<Vec<u8>> {
    if channel >= grid.channels() {
        return Err(Error::Parameter(format!("channel {channel} out of range for {} channels", grid.channels())));
    }
    let (h, w, _) = grid.shape();
    let vals: Vec<f64> = (0..h * w).map(|p| grid.row(p)[channel].as_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(vals.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn write_pgm<T: Scalar>(path: impl AsRef<Path>, grid: &FeatureGrid<T>, channel: usize) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(grid, channel)?)
}
