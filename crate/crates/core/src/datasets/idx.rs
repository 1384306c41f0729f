//! Big-endian IDX image/label files. Pixels are scaled to `[0, 1]` and the
//! 0-based digit labels shifted to `1..=k`.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated { path: path.into(), detail: format!("header ends before byte {}", at + 4) })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::WrongMagic { path: path.into(), expected, found });
    }
    Ok(())
}

fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let d = rows * cols;
    let need = n.checked_mul(d).and_then(|v| v.checked_add(16));
    match need {
        Some(need) if bytes.len() >= need => {
            let pixels = bytes[16..need].iter().map(|&b| b as f64 / 255.0).collect();
            Ok((n, d, pixels))
        }
        _ => Err(Error::Truncated {
            path: path.into(),
            detail: format!("{n} images of {rows}x{cols} need more than the {} bytes present", bytes.len()),
        }),
    }
}

fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let body = bytes.get(8..8 + n).ok_or_else(|| Error::Truncated {
        path: path.into(),
        detail: format!("{n} labels declared, {} present", bytes.len().saturating_sub(8)),
    })?;
    Ok(body.iter().map(|&b| b as usize + 1).collect())
}

/// Loads an image/label pair. `k` is the largest label present unless given.
pub fn load_idx(images: &Path, labels: &Path, k: Option<usize>) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (n, d, pixels) = parse_images(&img_bytes, images)?;
    let ys = parse_labels(&lab_bytes, labels)?;
    if ys.len() != n {
        return Err(Error::CountMismatch { images: n, labels: ys.len() });
    }
    if d == 0 {
        return Err(Error::Format(format!("{}: zero-sized images", images.display())));
    }
    let inferred = ys.iter().copied().max().unwrap_or(1).max(2);
    let k = k.unwrap_or(inferred);
    if k < inferred {
        return Err(Error::Invariant(format!("label {inferred} exceeds k = {k}")));
    }
    LabeledDataset::new(pixels, ys, k, d, images.file_name().map_or("idx".into(), |f| f.to_string_lossy().into_owned()))
}

/// Writes an IDX image file from raw bytes (`n * rows * cols`).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::DimensionMismatch { expected: n * rows * cols, got: pixels.len() });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes an IDX label file of 0-based class bytes.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
