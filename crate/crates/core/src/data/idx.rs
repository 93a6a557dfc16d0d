//! The IDX container used by the MNIST and EMNIST distributions.
//!
//! ```text
//! offset  size  field
//! 0       2     zero
//! 2       1     element type (0x08 = unsigned byte)
//! 3       1     number of dimensions d
//! 4       4*d   extents, big-endian u32
//! 4+4*d   ...   payload, row-major
//! ```
//!
//! Images use magic `0x00000803` (three dimensions), labels `0x00000801`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// How raw label bytes map to class indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelEncoding {
    /// Labels are stored as `0..num_classes`.
    ZeroBased { num_classes: usize },
    /// Labels are stored as `1..=num_classes` (EMNIST letters).
    OneBased { num_classes: usize },
}

impl LabelEncoding {
    pub fn num_classes(self) -> usize {
        match self {
            LabelEncoding::ZeroBased { num_classes } | LabelEncoding::OneBased { num_classes } => num_classes,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            offset: bytes.len(),
            reason: format!("header truncated: needed 4 bytes at offset {offset}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Idx {
            offset: 0,
            reason: format!("wrong magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, count: u64) -> Result<&'a [u8]> {
    let count = usize::try_from(count)
        .ok()
        .filter(|&c| c.checked_add(header).is_some())
        .ok_or_else(|| Error::Idx {
            offset: 4,
            reason: format!("declared payload of {count} bytes overflows"),
        })?;
    let have = bytes.len() - header;
    if have < count {
        return Err(Error::Idx {
            offset: bytes.len(),
            reason: format!("payload truncated: header declares {count} bytes, found {have}"),
        });
    }
    if have > count {
        return Err(Error::Idx {
            offset: header + count,
            reason: format!("{} trailing bytes after declared payload", have - count),
        });
    }
    Ok(&bytes[header..])
}

/// Parses an image file into `[N, 1, rows, cols]` with pixels `b / 255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)?;
    let rows = read_u32(bytes, 8)?;
    let cols = read_u32(bytes, 12)?;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("zero extent in header ({n} x {rows} x {cols})"),
        });
    }
    let count = u64::from(n)
        .checked_mul(u64::from(rows))
        .and_then(|c| c.checked_mul(u64::from(cols)))
        .ok_or_else(|| Error::Idx {
            offset: 4,
            reason: format!("dimensions {n} x {rows} x {cols} overflow"),
        })?;
    let pixels = payload(bytes, 16, count)?;
    let data = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new(&[n as usize, 1, rows as usize, cols as usize], data)
}

/// Parses a label file into class indices.
pub fn parse_idx_labels(bytes: &[u8], encoding: LabelEncoding) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)?;
    let raw = payload(bytes, 8, u64::from(n))?;
    let classes = encoding.num_classes();
    raw.iter()
        .enumerate()
        .map(|(i, &b)| {
            let label = match encoding {
                LabelEncoding::ZeroBased { .. } => Some(usize::from(b)),
                LabelEncoding::OneBased { .. } => usize::from(b).checked_sub(1),
            };
            label.filter(|&l| l < classes).ok_or_else(|| Error::Idx {
                offset: 8 + i,
                reason: format!("label {b} outside the {classes}-class range"),
            })
        })
        .collect()
}

/// Serializes raw image bytes as an IDX image file.
pub fn write_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len() as u64, u64::from(n) * u64::from(rows) * u64::from(cols));
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, n, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Serializes raw label bytes as an IDX label file.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Inverse of the `b / 255` pixel mapping, for regenerating fixtures.
pub fn pixels_to_bytes(pixels: &[f32]) -> Vec<u8> {
    pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
}
