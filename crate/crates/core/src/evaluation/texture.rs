//! PSNR, SSIM and MSE on 8-bit intensities.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};
use crate::image::RasterImage;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// `[0, 1]` intensity to its 8-bit level, as a float.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round()
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (L * L / mse).log10()).min(PSNR_CAP)
    }
}

fn check(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(pred: &RasterImage, reference: &RasterImage) -> Result<f64> {
    check(pred, reference)?;
    let n = pred.data().len() as f64;
    Ok(pred.data().iter().zip(reference.data()).map(|(a, b)| (quantize(*a) - quantize(*b)).powi(2)).sum::<f64>() / n)
}

pub fn psnr(pred: &RasterImage, reference: &RasterImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, reference)?))
}

fn gaussian_taps() -> Vec<f64> {
    (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect()
}

/// Separable Gaussian smoothing; taps falling outside the image are dropped
/// and the remaining weights renormalized.
fn blur(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len as i64 {
                let (mut s, mut z) = (0.0, 0.0);
                for t in -r..=r {
                    let j = i + t;
                    if j >= 0 && j < len as i64 {
                        let wgt = taps[(t + r) as usize];
                        s += wgt * src[base + j as usize * stride];
                        z += wgt;
                    }
                }
                out[base + i as usize * stride] = s / z;
            }
        }
        out
    };
    let rows = pass(x, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Mean SSIM of one channel pair of 8-bit levels.
fn ssim_channel(x: &[f64], y: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (K1 * L).powi(2);
    let c2 = (K2 * L).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (blur(x, h, w, taps), blur(y, h, w, taps));
    let (sxx, syy, sxy) = (blur(&xx, h, w, taps), blur(&yy, h, w, taps), blur(&xy, h, w, taps));
    let mut total = 0.0;
    for i in 0..h * w {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / (h * w) as f64
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(pred: &RasterImage, reference: &RasterImage) -> Result<f64> {
    check(pred, reference)?;
    let (h, w, c) = pred.dims();
    let taps = gaussian_taps();
    let mut total = 0.0;
    for k in 0..c {
        let x: Vec<f64> = pred.channel(k).into_iter().map(quantize).collect();
        let y: Vec<f64> = reference.channel(k).into_iter().map(quantize).collect();
        total += ssim_channel(&x, &y, h, w, &taps);
    }
    Ok(total / c as f64)
}

pub fn texture_metrics(pred: &RasterImage, reference: &RasterImage) -> Result<TextureMetrics> {
    let mse = mse(pred, reference)?;
    Ok(TextureMetrics { psnr: psnr_from_mse(mse), ssim: ssim(pred, reference)?, mse })
}
