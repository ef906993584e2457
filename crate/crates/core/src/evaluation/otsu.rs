//! Otsu thresholding and the binary morphology used to turn stain channels
//! into masks.

use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use crate::error::{invalid, Result};

pub const BINS: usize = 256;

/// 8-bit bin of a `[0, 1]` intensity.
pub fn bin_of(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

pub fn histogram(values: &[f64]) -> [u64; BINS] {
    let mut h = [0u64; BINS];
    for &v in values {
        h[bin_of(v)] += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Otsu {
    /// Positive pixels are those with `bin_of(v) >= bin`.
    pub bin: usize,
    /// `bin / 255`.
    pub threshold: f64,
    /// Only one intensity level occurs; nothing counts as positive.
    pub degenerate: bool,
}

impl Otsu {
    pub fn is_positive(&self, v: f64) -> bool {
        !self.degenerate && bin_of(v) >= self.bin
    }
}

/// Threshold maximizing the between-class variance of the 256-bin histogram.
/// Ties go to the lowest bin.
pub fn otsu_threshold(values: &[f64]) -> Result<Otsu> {
    if values.is_empty() {
        return Err(invalid("Otsu threshold of an empty image"));
    }
    let hist = histogram(values);
    let occupied: Vec<usize> = (0..BINS).filter(|&i| hist[i] > 0).collect();
    if occupied.len() == 1 {
        let b = occupied[0];
        return Ok(Otsu { bin: b, threshold: b as f64 / 255.0, degenerate: true });
    }
    let n = values.len() as i128;
    let total: i128 = (0..BINS).map(|i| i as i128 * hist[i] as i128).sum();
    let (mut w0, mut s0) = (0i128, 0i128);
    let (mut best_bin, mut best) = (0usize, f64::NEG_INFINITY);
    for k in 1..BINS {
        w0 += hist[k - 1] as i128;
        s0 += (k as i128 - 1) * hist[k - 1] as i128;
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        // N²·σ_b² = (N·S0 − w0·S)² / (w0·w1)
        let d = (n * s0 - w0 * total) as f64;
        let v = d * d / (w0 as f64 * w1 as f64);
        if v > best * (1.0 + 1e-12) || best == f64::NEG_INFINITY {
            best = v;
            best_bin = k;
        }
    }
    Ok(Otsu { bin: best_bin, threshold: best_bin as f64 / 255.0, degenerate: false })
}

/// Structuring-element sizes for mask cleanup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Morphology {
    pub dilation_size: usize,
    pub dilation_iterations: usize,
    pub median_size: usize,
}

impl Default for Morphology {
    fn default() -> Self {
        Self { dilation_size: 3, dilation_iterations: 1, median_size: 3 }
    }
}

/// Square dilation; neighbors outside the image are ignored.
pub fn dilate(mask: &BinaryMask, size: usize) -> BinaryMask {
    let r = (size / 2) as i64;
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    BinaryMask::from_fn(mask.height(), mask.width(), |row, col| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, x) = (row as i64 + dy, col as i64 + dx);
                if y >= 0 && x >= 0 && y < h && x < w && mask.get(y as usize, x as usize) {
                    return true;
                }
            }
        }
        false
    })
}

/// Square median filter with replicated borders: positive when more than
/// half of the `size²` samples are.
pub fn median(mask: &BinaryMask, size: usize) -> BinaryMask {
    let r = (size / 2) as i64;
    let k = (2 * r + 1) * (2 * r + 1);
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    BinaryMask::from_fn(mask.height(), mask.width(), |row, col| {
        let mut count = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let y = (row as i64 + dy).clamp(0, h - 1) as usize;
                let x = (col as i64 + dx).clamp(0, w - 1) as usize;
                count += mask.get(y, x) as i64;
            }
        }
        2 * count > k
    })
}

/// Otsu, binarize, dilate, median.
pub fn threshold_mask(values: &[f64], height: usize, width: usize, morph: &Morphology) -> Result<(BinaryMask, Otsu)> {
    let otsu = otsu_threshold(values)?;
    let mut mask = BinaryMask::new(height, width, values.iter().map(|&v| otsu.is_positive(v)).collect())?;
    for _ in 0..morph.dilation_iterations {
        mask = dilate(&mask, morph.dilation_size);
    }
    if morph.median_size > 1 {
        mask = median(&mask, morph.median_size);
    }
    Ok((mask, otsu))
}
