//! Stain-specific mask extraction: per-channel mIF masks and the DAB mask of
//! brightfield IHC images via colour deconvolution.

use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use super::otsu::{threshold_mask, Morphology, Otsu};
use crate::error::{invalid, Result};
use crate::image::RasterImage;

/// Optical-density directions of hematoxylin, eosin and DAB
/// (Ruifrok & Johnston), before normalization.
pub const HEMATOXYLIN: [f64; 3] = [0.65, 0.70, 0.29];
pub const EOSIN: [f64; 3] = [0.07, 0.99, 0.11];
pub const DAB: [f64; 3] = [0.27, 0.57, 0.78];

/// Offset keeping the logarithm finite on black pixels.
pub const OD_EPS: f64 = 1.0 / 255.0;

/// DAB concentration ranges below this are treated as a blank channel.
pub const DAB_MIN_RANGE: f64 = 1e-3;

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// Row-normalized stain matrix `S` with rows H, E, DAB.
pub fn stain_matrix() -> [[f64; 3]; 3] {
    [normalized(HEMATOXYLIN), normalized(EOSIN), normalized(DAB)]
}

fn inverse(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let n = nalgebra::Matrix3::from_row_slice(&m.concat());
    let inv = n.try_inverse().expect("stain matrix is invertible");
    std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)]))
}

/// Concentrations `c` solving `OD = c·S` for one RGB pixel, clamped at zero.
pub fn deconvolve_pixel(rgb: [f64; 3], inv: &[[f64; 3]; 3]) -> [f64; 3] {
    let od = rgb.map(|i| -((i + OD_EPS).max(1e-12)).log10());
    std::array::from_fn(|s| (0..3).map(|k| od[k] * inv[k][s]).sum::<f64>().max(0.0))
}

/// Forward Beer–Lambert model matching [`deconvolve_pixel`]:
/// `I = 10^(−c·S) − ε`.
pub fn beer_lambert(conc: [f64; 3]) -> [f64; 3] {
    let s = stain_matrix();
    std::array::from_fn(|k| 10f64.powf(-(0..3).map(|j| conc[j] * s[j][k]).sum::<f64>()) - OD_EPS)
}

/// Per-pixel H, E and DAB concentrations (unbounded above).
pub fn color_deconvolution(rgb: &RasterImage) -> Result<RasterImage> {
    if rgb.channels() != 3 {
        return Err(invalid("colour deconvolution needs an RGB image"));
    }
    let inv = inverse(stain_matrix());
    let (h, w, _) = rgb.dims();
    let mut out = Vec::with_capacity(h * w * 3);
    for px in rgb.data().chunks(3) {
        out.extend(deconvolve_pixel([px[0], px[1], px[2]], &inv));
    }
    RasterImage::from_raw(h, w, 3, out)
}

/// Positive-pixel mask of the DAB channel: min-max normalization and Otsu.
/// A flat DAB channel yields an empty mask.
pub fn ihc_dab_mask(image: &RasterImage) -> Result<(BinaryMask, Option<Otsu>)> {
    let conc = color_deconvolution(image)?;
    let (h, w, _) = conc.dims();
    let dab = conc.channel(2);
    let (lo, hi) = dab.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < DAB_MIN_RANGE {
        return Ok((BinaryMask::empty(h, w), None));
    }
    let norm: Vec<f64> = dab.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let none = Morphology { dilation_size: 1, dilation_iterations: 0, median_size: 1 };
    let (mask, otsu) = threshold_mask(&norm, h, w, &none)?;
    Ok((mask, Some(otsu)))
}

/// Channel masks of a multiplexed immunofluorescence image.
#[derive(Debug, Clone, PartialEq)]
pub struct MifMasks {
    pub dapi: BinaryMask,
    pub panck: BinaryMask,
    pub cd3: BinaryMask,
}

impl MifMasks {
    pub fn named(&self) -> [(&'static str, &BinaryMask); 3] {
        [("dapi", &self.dapi), ("panck", &self.panck), ("cd3", &self.cd3)]
    }
}

/// Red = DAPI, green = PanCK, blue = CD3; each channel goes through Otsu,
/// dilation and a median filter.
pub fn mif_channel_masks(image: &RasterImage, morph: &Morphology) -> Result<MifMasks> {
    if image.channels() != 3 {
        return Err(invalid("mIF masks need a 3-channel image"));
    }
    let (h, w, _) = image.dims();
    let m = |k: usize| threshold_mask(&image.channel(k), h, w, morph).map(|r| r.0);
    Ok(MifMasks { dapi: m(0)?, panck: m(1)?, cd3: m(2)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainKind {
    #[default]
    Mif,
    Ihc,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn deconv(rgb: [f64; 3]) -> [f64; 3] {
        deconvolve_pixel(rgb, &inverse(stain_matrix()))
    }

    #[test]
    fn white_has_no_stain() {
        for c in deconv([1.0, 1.0, 1.0]) {
            assert!(c.abs() <= 2e-3);
        }
    }

    #[test]
    fn beer_lambert_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let c = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let back = deconv(beer_lambert(c));
            for k in 0..3 {
                assert!((back[k] - c[k]).abs() < 1e-3, "{c:?} -> {back:?}");
            }
        }
        let dab = deconv(beer_lambert([0.0, 0.0, 1.3]));
        assert!((dab[2] - 1.3).abs() < 1e-3 && dab[0] < 1e-3 && dab[1] < 1e-3);
        let h = deconv(beer_lambert([0.8, 0.0, 0.0]));
        assert!(h[0] > 0.5 && h[2] < 1e-3);
    }

    #[test]
    fn stain_rows_are_unit_vectors() {
        for row in stain_matrix() {
            assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    fn from_conc(h: usize, w: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> RasterImage {
        RasterImage::from_fn(h, w, 3, |r, c, k| beer_lambert(f(r, c))[k].clamp(0.0, 1.0)).unwrap()
    }

    #[test]
    fn half_dab_half_white() {
        let img = from_conc(8, 10, |_, c| if c < 5 { [0.0, 0.0, 0.8] } else { [0.0, 0.0, 0.0] });
        let (m, _) = ihc_dab_mask(&img).unwrap();
        assert_eq!(m, BinaryMask::from_fn(8, 10, |_, c| c < 5));
    }

    #[test]
    fn blank_and_hematoxylin_images() {
        let white = RasterImage::filled(6, 6, 3, 1.0).unwrap();
        assert!(ihc_dab_mask(&white).unwrap().0.is_empty());
        let hema = from_conc(16, 16, |r, c| [0.2 + 0.05 * ((r * 16 + c) % 7) as f64, 0.0, 0.0]);
        let m = ihc_dab_mask(&hema).unwrap().0;
        assert!(m.count() * 100 < 16 * 16);
    }

    #[test]
    fn mif_channel_order_and_empty_channel() {
        let img = RasterImage::from_fn(12, 12, 3, |r, c, k| match k {
            0 => (r < 6) as u8 as f64,
            1 => 0.0,
            _ => (c >= 6) as u8 as f64 * 0.7,
        })
        .unwrap();
        let m = mif_channel_masks(&img, &Morphology::default()).unwrap();
        assert!(m.panck.is_empty());
        assert!(m.dapi.get(0, 0) && !m.dapi.get(11, 0));
        assert!(m.cd3.get(0, 11) && !m.cd3.get(0, 0));
    }
}
