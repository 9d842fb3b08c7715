//! Row-major RGB float images plus PNG and NPY encoding.

use std::io::Write;
use std::path::Path;

use crate::scene::Rgb;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(#[from] ::image::ImageError),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` values, pixel-major then channel.
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(value.as_slice());
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        Rgb::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(c.as_slice());
    }

    pub fn same_size(&self, other: &ImageBuffer) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// 8-bit quantization: `round(clamp(c, 0, 1) * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        ImageBuffer { width, height, data: bytes.iter().map(|b| *b as f64 / 255.0).collect() }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let encoder = ::image::codecs::png::PngEncoder::new(&mut out);
        ::image::ImageEncoder::write_image(
            encoder,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let img = ::image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::from_rgb8(w as usize, h as usize, img.as_raw()))
    }

    /// NPY v1.0, little-endian `f8`, C order, shape `(height, width, 3)`.
    pub fn encode_npy(&self) -> Vec<u8> {
        let dict = format!(
            "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}, 3), }}",
            self.height, self.width
        );
        // magic(6) + version(2) + len(2) + dict + newline, padded to 64 bytes
        let unpadded = 10 + dict.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        let header_len = dict.len() + pad + 1;
        let mut out = Vec::with_capacity(10 + header_len + 8 * self.data.len());
        out.extend_from_slice(b"\x93NUMPY\x01\x00");
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out.extend(std::iter::repeat_n(b' ', pad));
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode_npy())?;
        Ok(())
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer { data: self.data.iter().map(|c| c.clamp(0.0, 1.0)).collect(), ..self.clone() }
    }

    /// Rec.601 luma per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }
}
