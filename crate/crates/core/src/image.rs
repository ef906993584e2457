//! Raster images in `[0, 1]` and their PNG/TIFF encoding.
//!
//! Pixels are stored row-major with interleaved channels (`H×W×c`). Integer
//! files are mapped to `[0, 1]` by dividing by the maximum of their sample
//! type and written back with round-half-away-from-zero.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{invalid, shape, Error, Result};

/// Sample depth used when writing an image file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// An `H×W×c` floating point image.
///
/// Images built with [`RasterImage::new`] hold values in `[0, 1]`. Raw model
/// output, which may leave that range, is carried by [`RasterImage::from_raw`]
/// and clamped by [`RasterImage::clamped`] before it is written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let img = Self::from_raw(height, width, channels, data)?;
        if let Some(v) = img.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(img)
    }

    /// Builds an image whose values only need to be finite.
    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} samples for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite pixel value"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    /// Crops `height×width` pixels starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(invalid(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self { height, width, channels: self.channels, data })
    }

    /// Box-filter downsampling by an integer factor; trailing rows/cols that do
    /// not fill a whole block are dropped.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || factor > self.height || factor > self.width {
            return Err(invalid(format!("downsample factor {factor} for {}x{}", self.height, self.width)));
        }
        let (h, w, c) = (self.height / factor, self.width / factor, self.channels);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; h * w * c];
        for y in 0..h * factor {
            for x in 0..w * factor {
                let dst = ((y / factor) * w + x / factor) * c;
                for ch in 0..c {
                    data[dst + ch] += self.get(y, x, ch) * norm;
                }
            }
        }
        Self::from_raw(h, w, c, data)
    }

    /// Reads an 8- or 16-bit grayscale or RGB(A) PNG/TIFF. Alpha is dropped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Self::from_dynamic(img)
    }

    pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, data): (usize, Vec<f64>) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
            DynamicImage::ImageLuma16(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
            DynamicImage::ImageLumaA8(_) => {
                (1, img.to_luma8().into_raw().iter().map(|&v| v as f64 / 255.0).collect())
            }
            DynamicImage::ImageLumaA16(_) => {
                (1, img.to_luma16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect())
            }
            DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
            DynamicImage::ImageRgb16(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
            DynamicImage::ImageRgba8(_) => {
                (3, img.to_rgb8().into_raw().iter().map(|&v| v as f64 / 255.0).collect())
            }
            DynamicImage::ImageRgba16(_) => {
                (3, img.to_rgb16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect())
            }
            other => (
                3,
                other
                    .to_rgb32f()
                    .into_raw()
                    .iter()
                    .map(|&v| (v as f64).clamp(0.0, 1.0))
                    .collect(),
            ),
        };
        Self::new(h, w, channels, data)
    }

    /// Writes the image (clamped to `[0, 1]`); the container follows the file
    /// extension (`.png`, `.tif`, `.tiff`).
    pub fn save(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !matches!(ext.as_str(), "png" | "tif" | "tiff") {
            return Err(invalid(format!("unsupported image extension for {}", path.display())));
        }
        self.to_dynamic(depth).save(path).map_err(Error::from)
    }

    pub(crate) fn to_dynamic(&self, depth: BitDepth) -> DynamicImage {
        let max = depth.max_value();
        // f64::round rounds half away from zero.
        let quantize = |v: f64| (v.clamp(0.0, 1.0) * max).round();
        let (w, h) = (self.width as u32, self.height as u32);
        match (depth, self.channels) {
            (BitDepth::Eight, 1) => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data.iter().map(|&v| quantize(v) as u8).collect())
                    .expect("buffer size matches dimensions"),
            ),
            (BitDepth::Eight, _) => DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data.iter().map(|&v| quantize(v) as u8).collect())
                    .expect("buffer size matches dimensions"),
            ),
            (BitDepth::Sixteen, 1) => DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, self.data.iter().map(|&v| quantize(v) as u16).collect())
                    .expect("buffer size matches dimensions"),
            ),
            (BitDepth::Sixteen, _) => DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, self.data.iter().map(|&v| quantize(v) as u16).collect())
                    .expect("buffer size matches dimensions"),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_shapes() {
        assert!(RasterImage::new(1, 1, 1, vec![1.5]).is_err());
        assert!(RasterImage::new(0, 1, 1, vec![]).is_err());
        assert!(RasterImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(RasterImage::from_raw(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(RasterImage::from_raw(1, 1, 1, vec![-0.2]).is_ok());
    }

    #[test]
    fn png_round_trip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f64 / 104.0).unwrap();
        for (depth, max) in [(BitDepth::Eight, 255.0), (BitDepth::Sixteen, 65535.0)] {
            for ext in ["png", "tiff"] {
                let path = dir.path().join(format!("img.{ext}"));
                img.save(&path, depth).unwrap();
                let back = RasterImage::load(&path).unwrap();
                assert_eq!(back.dims(), img.dims());
                for (a, b) in back.data().iter().zip(img.data()) {
                    assert_eq!(*a, (b * max).round() / max);
                }
            }
        }
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        let img = RasterImage::new(1, 2, 1, vec![0.5 / 255.0, 1.49 / 255.0]).unwrap();
        let DynamicImage::ImageLuma8(buf) = img.to_dynamic(BitDepth::Eight) else { panic!() };
        assert_eq!(buf.into_raw(), vec![1, 1]);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = RasterImage::from_fn(4, 4, 1, |y, x, _| ((y / 2) * 2 + x / 2) as f64 / 4.0).unwrap();
        let small = img.downsample(2).unwrap();
        assert_eq!(small.data(), &[0.0, 0.25, 0.5, 0.75]);
    }
}
