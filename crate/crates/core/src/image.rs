//! Image containers and PNG I/O.
//!
//! [`Image`] is height × width × channels, `f32` in `[0, 1]`, row-major HWC.
//! Networks consume `[N, C, H, W]` arrays in `[-1, 1]`; [`to_model`] and
//! [`from_model`] convert between the two with the same affine map everywhere.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::Array;

pub const SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(height, width, 3);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mse(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f64::from(a - b).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, self.width - 1 - x, c, self.at(y, x, c));
                }
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = match self.channels {
            3 => {
                let buf: RgbImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                    let p = self.pixel(y as usize, x as usize);
                    Rgb([to8(p[0]), to8(p[1]), to8(p[2])])
                });
                buf.save(path)
            }
            1 => {
                let buf: GrayImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                    Luma([to8(self.at(y as usize, x as usize, 0))])
                });
                buf.save(path)
            }
            c => return Err(Error::param("channels", format!("cannot save {c}-channel PNG"))),
        };
        res.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(buf: &RgbImage) -> Image {
        let (w, h) = buf.dimensions();
        let mut out = Image::new(h as usize, w as usize, 3);
        for (x, y, p) in buf.enumerate_pixels() {
            for c in 0..3 {
                out.set(y as usize, x as usize, c, f32::from(p[c]) / 255.0);
            }
        }
        out
    }

    /// Quantizes through 8 bits, matching a PNG round trip.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out
    }
}

/// Binary foreground mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn fraction(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.data[y * self.width + self.width - 1 - x] = self.data[y * self.width + x];
            }
        }
        out
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save_png(path)
    }
}

/// Stacks RGB images into a `[N, 3, H, W]` array in `[-1, 1]`.
pub fn to_model(images: &[Image]) -> Array<f32> {
    let (h, w) = images.first().map_or((SIZE, SIZE), |i| (i.height, i.width));
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        assert_eq!((img.height, img.width, img.channels), (h, w, 3), "to_model expects equal RGB images");
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(img.at(y, x, c) * 2.0 - 1.0);
                }
            }
        }
    }
    Array::from_vec(&[images.len(), 3, h, w], data).unwrap()
}

/// Inverse of [`to_model`], clamping to `[0, 1]`.
pub fn from_model(batch: &Array<f32>) -> Vec<Image> {
    let (n, c, h, w) = (batch.dim(0), batch.dim(1), batch.dim(2), batch.dim(3));
    assert_eq!(c, 3);
    (0..n)
        .map(|i| {
            let mut img = Image::new(h, w, 3);
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let v = batch.data()[((i * 3 + ch) * h + y) * w + x];
                        img.set(y, x, ch, ((v + 1.0) * 0.5).clamp(0.0, 1.0));
                    }
                }
            }
            img
        })
        .collect()
}

/// Tiles equally sized images into a grid with a one-pixel gap.
pub fn grid(rows: &[Vec<Image>]) -> Image {
    let (h, w) = rows
        .first()
        .and_then(|r| r.first())
        .map_or((SIZE, SIZE), |i| (i.height, i.width));
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Image::filled(
        rows.len() * (h + 1) + 1,
        ncols * (w + 1) + 1,
        [1.0, 1.0, 1.0],
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        let v = img.at(y, x, ch.min(img.channels - 1));
                        out.set(r * (h + 1) + 1 + y, c * (w + 1) + 1 + x, ch, v);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_conversion_roundtrip() {
        let mut img = Image::new(4, 5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 7) as f32 / 6.0;
        }
        let arr = to_model(std::slice::from_ref(&img));
        assert_eq!(arr.shape(), &[1, 3, 4, 5]);
        let back = &from_model(&arr)[0];
        assert!(img.mse(back) < 1e-12);
    }

    #[test]
    fn png_roundtrip_equals_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(6, 7, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).fract();
        }
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img.quantized());
    }
}
