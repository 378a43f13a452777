//! Raw float grid files.
//!
//! Layout (little-endian): the magic `ERPF`, then `u32` height, width,
//! channels and frame count, then `T·H·W·C` `f32` samples, frame-major and
//! row-major within a frame.

use std::fs;
use std::path::Path;

use super::{format_err, io_err};
use crate::error::{Error, Result};
use crate::image::Image;

pub const GRID_MAGIC: &[u8; 4] = b"ERPF";
const HEADER_LEN: usize = 20;

/// Writes equally shaped grids as one file. Samples are narrowed to `f32`.
pub fn write_grids(path: &Path, frames: &[Image]) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::arg("cannot write an empty grid sequence"));
    };
    for (t, f) in frames.iter().enumerate() {
        f.check_same_shape(first, &format!("grid frame {t}"))?;
    }
    let dims = [first.height(), first.width(), first.channels(), frames.len()];
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * first.len() * frames.len());
    buf.extend_from_slice(GRID_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::arg("grid dimension exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for f in frames {
        for &v in f.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads every frame of a grid file.
pub fn read_grids(path: &Path) -> Result<Vec<Image>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != GRID_MAGIC {
        return Err(format_err(path, "not a raw float grid (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c, t) = (word(0), word(1), word(2), word(3));
    let per_frame = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| format_err(path, "grid dimensions overflow"))?;
    let expected = per_frame
        .checked_mul(t)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(path, "grid dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!(
                "header says {t} frames of {h}x{w}x{c} ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }
    if t == 0 {
        return Err(format_err(path, "grid file holds no frames"));
    }
    let samples: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    samples
        .chunks_exact(per_frame.max(1))
        .take(t)
        .map(|chunk| Image::from_vec(h, w, c, chunk.to_vec()))
        .collect()
}
