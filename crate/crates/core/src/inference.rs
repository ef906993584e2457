//! Translation at arbitrary output resolution, optionally tile by tile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::Backbone;
use crate::error::{invalid, Error, Result};
use crate::grid::{make_grid, nearest_pixel};
use crate::image::RasterImage;
use crate::model::ImplicitModel;

/// A positive rational output scale, e.g. `4`, `0.5` or `3/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scale {
    num: u64,
    den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Scale {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(invalid(format!("scale {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn one() -> Self {
        Self { num: 1, den: 1 }
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn denominator(self) -> u64 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(scale·n)`, halves rounded up.
    pub fn apply(self, n: usize) -> usize {
        let n = n as u128;
        ((2 * self.num as u128 * n + self.den as u128) / (2 * self.den as u128)) as usize
    }

    pub fn output_size(self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (h, w) = (self.apply(height), self.apply(width));
        if h == 0 || w == 0 {
            return Err(invalid(format!("scale {self} maps {height}x{width} to an empty grid")));
        }
        Ok((h, w))
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("cannot parse scale `{s}`"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            return Self::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || (int.is_empty() && frac.is_empty()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Self::new(int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?, den)
    }
}

impl Serialize for Scale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Tiled inference: the input is split into `tile×tile` cores, each encoded
/// with `overlap` extra pixels of context on every side. Output points whose
/// input pixel lies within `overlap/2` of a core seam are averaged over the
/// tiles that reach them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub tile: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
}

fn default_overlap() -> usize {
    32
}

impl Tiling {
    pub fn new(tile: usize) -> Self {
        Self { tile, overlap: default_overlap() }
    }

    /// Core and overlap rounded up to multiples of `align` so every tile
    /// origin falls on the global attention window grid.
    fn aligned(self, align: usize) -> Self {
        let up = |v: usize| v.div_ceil(align) * align;
        Self { tile: up(self.tile.max(1)), overlap: up(self.overlap) }
    }
}

/// One axis of the tile layout: `(core_start, core_end, ext_start, ext_end)`.
fn axis_tiles(n: usize, t: Tiling) -> Vec<(usize, usize, usize, usize)> {
    (0..n)
        .step_by(t.tile)
        .map(|s| {
            let e = (s + t.tile).min(n);
            (s, e, s.saturating_sub(t.overlap), (e + t.overlap).min(n))
        })
        .collect()
}

/// Whether pixel `p` is predicted by the tile with this axis extent.
fn covers(p: usize, (cs, ce, _, _): (usize, usize, usize, usize), band: usize) -> bool {
    p + band >= cs && p < ce + band
}

/// Renders `image` at `round(scale·H)×round(scale·W)`.
pub fn translate(model: &ImplicitModel, image: &RasterImage, scale: Scale, tiling: Option<Tiling>) -> Result<RasterImage> {
    let (oh, ow) = scale.output_size(image.height(), image.width())?;
    let grid = make_grid(oh, ow)?;
    let (h, w) = (image.height(), image.width());
    let tiling = match tiling {
        None => return model.predict_grid(image, &grid),
        Some(t) if t.tile >= h && t.tile >= w => return model.predict_grid(image, &grid),
        Some(t) => {
            let cfg = model.config();
            let align = if cfg.backbone == Backbone::ConvOnly { 1 } else { cfg.attention.window_size };
            t.aligned(align)
        }
    };
    if image.channels() != model.config().input_channels {
        return Err(invalid(format!("model expects {} input channels", model.config().input_channels)));
    }
    let c = model.config().output_channels;
    let band = tiling.overlap / 2;
    let nearest: Vec<(usize, usize)> = grid.coords().iter().map(|&p| nearest_pixel(p, h, w)).collect();
    let mut sum = vec![0.0; oh * ow * c];
    let mut count = vec![0u32; oh * ow];
    for ty in axis_tiles(h, tiling) {
        for tx in axis_tiles(w, tiling) {
            let (ey0, ey1, ex0, ex1) = (ty.2, ty.3, tx.2, tx.3);
            let (eh, ew) = (ey1 - ey0, ex1 - ex0);
            let mut outs = Vec::new();
            let mut pixels = Vec::new();
            let mut coords = Vec::new();
            for (k, &(r, col)) in nearest.iter().enumerate() {
                if covers(r, ty, band) && covers(col, tx, band) {
                    outs.push(k);
                    pixels.push((r - ey0) * ew + (col - ex0));
                    coords.push(grid.coords()[k]);
                }
            }
            if outs.is_empty() {
                continue;
            }
            let crop = image.crop(ey0, ex0, eh, ew)?;
            let features = model.encode_rows(&crop);
            let y = model.predict_points(&features, eh, ew, &pixels, &coords);
            for (q, &k) in outs.iter().enumerate() {
                for (s, v) in sum[k * c..(k + 1) * c].iter_mut().zip(y.row(q)) {
                    *s += v;
                }
                count[k] += 1;
            }
        }
    }
    for (k, n) in count.iter().enumerate() {
        debug_assert!(*n > 0);
        for s in &mut sum[k * c..(k + 1) * c] {
            *s /= *n as f64;
        }
    }
    Ok(RasterImage::from_raw(oh, ow, c, sum)?.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{AttnEncoderConfig, ConvEncoderConfig};
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(backbone: Backbone) -> ImplicitModel {
        ImplicitModel::new(ModelConfig {
            backbone,
            conv: ConvEncoderConfig { num_layers: 3, output_channels: 4, ..Default::default() },
            attention: AttnEncoderConfig {
                embed_dim: 8,
                num_heads: 2,
                depth: 2,
                window_size: 4,
                mlp_ratio: 2,
                output_channels: 4,
                ..Default::default()
            },
            embed_dim: 4,
            hidden: vec![8],
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn image(h: usize, w: usize) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(h as u64 * 31 + w as u64);
        RasterImage::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn scale_parsing() {
        assert_eq!("4".parse::<Scale>().unwrap(), Scale::new(4, 1).unwrap());
        assert_eq!("0.5".parse::<Scale>().unwrap(), Scale::new(1, 2).unwrap());
        assert_eq!("3/2".parse::<Scale>().unwrap(), Scale::new(6, 4).unwrap());
        assert_eq!("1.25".parse::<Scale>().unwrap().to_string(), "5/4");
        for bad in ["0", "-1", "x", "1/0", "", "."] {
            assert!(bad.parse::<Scale>().is_err(), "{bad}");
        }
    }

    #[test]
    fn output_sizes() {
        for (s, expect) in [("0.5", 32), ("1", 64), ("2", 128), ("4", 256)] {
            assert_eq!(s.parse::<Scale>().unwrap().output_size(64, 64).unwrap(), (expect, expect));
        }
        assert_eq!("0.5".parse::<Scale>().unwrap().output_size(5, 3).unwrap(), (3, 2));
        assert!("1/8".parse::<Scale>().unwrap().output_size(2, 2).is_err());
        let m = model(Backbone::Fused);
        assert_eq!(translate(&m, &image(8, 8), "4".parse().unwrap(), None).unwrap().dims(), (32, 32, 3));
    }

    #[test]
    fn unit_scale_matches_predict_grid() {
        let m = model(Backbone::Fused);
        let img = image(8, 12);
        let a = translate(&m, &img, Scale::one(), None).unwrap();
        let b = m.predict_grid(&img, &make_grid(8, 12).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_two_subsamples_to_scale_one() {
        // The HR samples 2i and 2i+1 both resolve to LR pixel i, so the
        // windows agree; with the coordinate embedding switched off the
        // predictions must agree exactly.
        let mut m = model(Backbone::Fused);
        for p in m.params_mut() {
            if p.name().starts_with("head.embed") {
                p.value_mut().fill(0.0);
            }
        }
        let img = image(8, 8);
        let lr = translate(&m, &img, Scale::one(), None).unwrap();
        let hr = translate(&m, &img, Scale::new(2, 1).unwrap(), None).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                for di in 0..2 {
                    for dj in 0..2 {
                        assert_eq!(hr.pixel(2 * i + di, 2 * j + dj), lr.pixel(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn tiles_agree_away_from_seams() {
        for backbone in [Backbone::ConvOnly, Backbone::Fused] {
            let m = model(backbone);
            let img = image(32, 32);
            let whole = translate(&m, &img, Scale::one(), Some(Tiling::new(32))).unwrap();
            let tiled = translate(&m, &img, Scale::one(), Some(Tiling { tile: 16, overlap: 8 })).unwrap();
            assert_eq!(tiled.dims(), whole.dims());
            for r in 0..32 {
                for c in 0..32 {
                    let interior = (r as i64 - 16).abs() >= 8 && (c as i64 - 16).abs() >= 8;
                    if backbone == Backbone::ConvOnly || interior {
                        for k in 0..3 {
                            assert!((whole.get(r, c, k) - tiled.get(r, c, k)).abs() < 1e-5, "{backbone:?} ({r},{c})");
                        }
                    }
                }
            }
        }
    }
}
