//! IDX (MNIST-style) file parsing and writing.
//!
//! Big-endian magic numbers: `0x00000803` for image files (u8 payload,
//! dims count x rows x cols) and `0x00000801` for label files.

use ndarray::Array2;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

/// Which half of a standard IDX directory to load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedIdx {
            path: path.display().to_string(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != MAGIC_IMAGES {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            got: magic,
            expected: MAGIC_IMAGES,
        });
    }
    let count = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::TruncatedIdx {
            path: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..expected].to_vec()))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != MAGIC_LABELS {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            got: magic,
            expected: MAGIC_LABELS,
        });
    }
    let count = read_be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::TruncatedIdx {
            path: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Load an image/label IDX file pair.
///
/// Images are flattened row-major and scaled to `[0, 1]`; labels pair by
/// index. The class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (count, rows, cols, pixels) = read_images(images_path)?;
    let labels_raw = read_labels(labels_path)?;
    if count != labels_raw.len() {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels_raw.len(),
        });
    }
    let feature_dim = rows * cols;
    let mut features = Array2::zeros((count, feature_dim));
    for (i, pixel_row) in pixels.chunks_exact(feature_dim.max(1)).enumerate().take(count) {
        for (j, &p) in pixel_row.iter().enumerate() {
            features[[i, j]] = p as f64 / 255.0;
        }
    }
    let labels: Vec<u32> = labels_raw.iter().map(|&l| l as u32).collect();
    let num_classes = labels.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
    LabeledDataset::new(features, labels, num_classes)
}

/// Load one split from a directory using the standard MNIST file names.
pub fn load_idx_dir(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let (images, labels) = split.file_names();
    load_idx(&dir.join(images), &dir.join(labels))
}

/// Write an IDX image file (u8 pixels, row-major).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Write an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}
