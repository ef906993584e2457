//! Neighborhood gathering over channels-last `(H·W)×C` feature matrices.
//!
//! Output columns follow the same channel-major layout as
//! [`crate::grid::extract_window`].

use super::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Padding {
    /// Out-of-bounds neighbors read as zero.
    Zero,
    /// Out-of-bounds neighbors repeat the nearest edge pixel.
    Replicate,
}

/// Precomputed source indices of the `(2r+1)²` neighbors of a set of pixels.
#[derive(Debug, Clone)]
pub(crate) struct Neighborhood {
    hw: usize,
    k2: usize,
    // `queries × k2` flat pixel indices; `usize::MAX` marks a zero neighbor.
    table: Vec<usize>,
}

impl Neighborhood {
    /// Neighborhoods of `pixels` (flat row-major indices), or of every pixel.
    pub fn new(height: usize, width: usize, radius: usize, padding: Padding, pixels: Option<&[usize]>) -> Self {
        let k = 2 * radius + 1;
        let r = radius as isize;
        let all: Vec<usize>;
        let pixels = match pixels {
            Some(p) => p,
            None => {
                all = (0..height * width).collect();
                &all
            }
        };
        let mut table = Vec::with_capacity(pixels.len() * k * k);
        for &p in pixels {
            let (y0, x0) = ((p / width) as isize, (p % width) as isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (y0 + dy, x0 + dx);
                    let inside = y >= 0 && y < height as isize && x >= 0 && x < width as isize;
                    let src = match (inside, padding) {
                        (true, _) => (y as usize) * width + x as usize,
                        (false, Padding::Zero) => usize::MAX,
                        (false, Padding::Replicate) => {
                            let yc = y.clamp(0, height as isize - 1) as usize;
                            let xc = x.clamp(0, width as isize - 1) as usize;
                            yc * width + xc
                        }
                    };
                    table.push(src);
                }
            }
        }
        Self { hw: height * width, k2: k * k, table }
    }

    pub fn queries(&self) -> usize {
        self.table.len() / self.k2
    }

    /// `queries × (C·k²)` matrix of flattened windows.
    pub fn gather(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.hw, "neighborhood source rows");
        let c = x.cols();
        let d = c * self.k2;
        let mut out = Mat::zeros(self.queries(), d);
        let src = x.data();
        let dst = out.data_mut();
        for (q, nbrs) in self.table.chunks(self.k2).enumerate() {
            let row = &mut dst[q * d..(q + 1) * d];
            for (t, &s) in nbrs.iter().enumerate() {
                if s == usize::MAX {
                    continue;
                }
                let px = &src[s * c..(s + 1) * c];
                for (ch, v) in px.iter().enumerate() {
                    row[ch * self.k2 + t] = *v;
                }
            }
        }
        out
    }

    /// Adjoint of [`Neighborhood::gather`].
    pub fn scatter(&self, d: &Mat) -> Mat {
        let c = d.cols() / self.k2;
        let mut out = Mat::zeros(self.hw, c);
        let dst = out.data_mut();
        let width = d.cols();
        for (q, nbrs) in self.table.chunks(self.k2).enumerate() {
            let row = d.row(q);
            debug_assert_eq!(row.len(), width);
            for (t, &s) in nbrs.iter().enumerate() {
                if s == usize::MAX {
                    continue;
                }
                let px = &mut dst[s * c..(s + 1) * c];
                for (ch, v) in px.iter_mut().enumerate() {
                    *v += row[ch * self.k2 + t];
                }
            }
        }
        out
    }
}
