use crate::error::{shape, Result};
use crate::image::RasterImage;

/// A boolean `H×W` raster of positive pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape(format!("mask data has {} entries for {height}x{width}", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    pub fn complement(&self) -> Self {
        Self { data: self.data.iter().map(|v| !v).collect(), ..self.clone() }
    }

    /// Row/column pairs of positive pixels.
    pub fn positives(&self) -> Vec<(usize, usize)> {
        (0..self.data.len()).filter(|&i| self.data[i]).map(|i| (i / self.width, i % self.width)).collect()
    }

    /// Single-channel image with positives at 1.
    pub fn to_image(&self) -> RasterImage {
        RasterImage::new(self.height, self.width, 1, self.data.iter().map(|&v| v as u8 as f64).collect())
            .expect("mask dimensions are valid")
    }
}
