//! Normalized coordinate grids, nearest-pixel lookup and neighborhood windows.
//!
//! Pixel `(i, j)` of an `H×W` raster sits at the cell center
//! `(x_j, y_i) = (-1 + (2j+1)/W, -1 + (2i+1)/H)`. Grids at different
//! resolutions therefore sample one continuous square `[-1, 1]²`, and a
//! single-pixel raster maps to the origin.

use crate::error::{invalid, shape, Result};

/// Cell-center coordinate of index `i` on an axis of `n` samples.
pub fn axis_coordinate(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Index of the cell containing `coord` on an axis of `n` cells, clamped to
/// `[0, n-1]`.
pub fn axis_index(coord: f64, n: usize) -> usize {
    let t = ((coord + 1.0) * n as f64 / 2.0 - 0.5).round();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

/// `H'×W'` sample locations, stored row-major as `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl CoordinateGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.coords[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Builds the cell-center grid for an `height×width` raster.
pub fn make_grid(height: usize, width: usize) -> Result<CoordinateGrid> {
    if height == 0 || width == 0 {
        return Err(invalid(format!("grid dimensions must be positive, got {height}x{width}")));
    }
    let xs: Vec<f64> = (0..width).map(|j| axis_coordinate(j, width)).collect();
    let mut coords = Vec::with_capacity(height * width);
    for i in 0..height {
        let y = axis_coordinate(i, height);
        coords.extend(xs.iter().map(|&x| [x, y]));
    }
    Ok(CoordinateGrid { height, width, coords })
}

/// Nearest pixel `(row, col)` of an `height×width` raster for a normalized
/// `(x, y)` coordinate. Coordinates outside `[-1, 1]` clamp to the border.
pub fn nearest_pixel(coord: [f64; 2], height: usize, width: usize) -> (usize, usize) {
    (axis_index(coord[1], height), axis_index(coord[0], width))
}

/// Dense `C×H×W` feature tensor at the resolution of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!("feature map dims {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(shape(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    /// From a channels-last `(H·W)×C` buffer.
    pub(crate) fn from_channels_last(channels: usize, height: usize, width: usize, rows: &[f64]) -> Self {
        let hw = height * width;
        let mut data = vec![0.0; channels * hw];
        for p in 0..hw {
            for c in 0..channels {
                data[c * hw + p] = rows[p * channels + c];
            }
        }
        Self { channels, height, width, data }
    }

    #[cfg(test)]
    pub(crate) fn to_channels_last(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut rows = vec![0.0; hw * self.channels];
        for c in 0..self.channels {
            for p in 0..hw {
                rows[p * self.channels + c] = self.data[c * hw + p];
            }
        }
        rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// Channels `start..end` as a new map.
    pub fn channel_range(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.channels {
            return Err(invalid(format!("channel range {start}..{end} of {}", self.channels)));
        }
        let hw = self.height * self.width;
        Self::new(end - start, self.height, self.width, self.data[start * hw..end * hw].to_vec())
    }
}

/// Number of values in a radius-`radius` window over `channels` channels.
pub fn window_len(channels: usize, radius: usize) -> usize {
    let k = 2 * radius + 1;
    channels * k * k
}

/// Flattened `(2r+1)×(2r+1)` neighborhood of `pixel`.
///
/// Layout is channel-major, then row-major inside the window:
/// element `c·k² + (dy+r)·k + (dx+r)` holds channel `c` at offset `(dy, dx)`,
/// `k = 2r+1`. Neighbors outside the map repeat the nearest edge pixel.
pub fn extract_window(featmap: &FeatureMap, pixel: (usize, usize), radius: usize) -> Result<Vec<f64>> {
    let (row, col) = pixel;
    let (h, w) = (featmap.height, featmap.width);
    if row >= h || col >= w {
        return Err(invalid(format!("pixel ({row}, {col}) outside {h}x{w} feature map")));
    }
    let r = radius as isize;
    let mut out = Vec::with_capacity(window_len(featmap.channels, radius));
    for c in 0..featmap.channels {
        for dy in -r..=r {
            let y = (row as isize + dy).clamp(0, h as isize - 1) as usize;
            for dx in -r..=r {
                let x = (col as isize + dx).clamp(0, w as isize - 1) as usize;
                out.push(featmap.get(c, y, x));
            }
        }
    }
    Ok(out)
}
