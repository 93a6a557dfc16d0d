//! Grayscale tile montages written as binary PGM or PNG.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Value of the 1-pixel lines between tiles and of unused cells.
pub const SEPARATOR: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

/// `round(255 * clamp(p, 0, 1))`, halves rounded up; NaN maps to 0.
pub fn pixel_byte<T: Real>(p: T) -> u8 {
    let v = p.to_f64().unwrap_or(0.0);
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (255.0 * v + 0.5).floor() as u8
}

/// An 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn tile_extent<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        ref other => Err(Error::shape(
            "grid",
            format!("tiles must be [H, W] or [1, H, W], got {other:?}"),
        )),
    }
}

/// Lays tiles out row-major on a `rows x cols` lattice with 1-pixel
/// separators.
pub fn compose<T: Real>(tiles: &[&Tensor<T>], rows: usize, cols: usize) -> Result<Gray> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot build a grid from zero tiles".into()))?;
    if rows * cols < tiles.len() {
        return Err(Error::InvalidArgument(format!(
            "{rows} x {cols} grid cannot hold {} tiles",
            tiles.len()
        )));
    }
    let (h, w) = tile_extent(first)?;
    for t in tiles {
        if tile_extent(t)? != (h, w) {
            return Err(Error::shape("grid", format!("tile {:?} differs from {h} x {w}", t.shape())));
        }
    }
    let width = cols * w + cols - 1;
    let height = rows * h + rows - 1;
    let mut pixels = vec![SEPARATOR; width * height];
    for (n, t) in tiles.iter().enumerate() {
        let (top, left) = ((n / cols) * (h + 1), (n % cols) * (w + 1));
        for (r, src) in t.data().chunks_exact(w).enumerate() {
            let start = (top + r) * width + left;
            for (dst, &p) in pixels[start..start + w].iter_mut().zip(src) {
                *dst = pixel_byte(p);
            }
        }
    }
    Ok(Gray { width, height, pixels })
}

impl Gray {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Image("raster size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn encode(&self, format: ImageFormat) -> Result<Vec<u8>> {
        match format {
            ImageFormat::Pgm => Ok(self.to_pgm()),
            ImageFormat::Png => self.to_png(),
        }
    }
}

/// Composes and writes a grid to `path`.
pub fn write_grid<T: Real>(
    tiles: &[&Tensor<T>],
    rows: usize,
    cols: usize,
    path: &Path,
    format: ImageFormat,
) -> Result<()> {
    let bytes = compose(tiles, rows, cols)?.encode(format)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
