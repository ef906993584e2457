//! Fréchet distance between Gaussian fits of embedded image sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::image::RasterImage;

/// Added to covariance diagonals when a set has fewer samples than
/// embedding dimensions.
pub const COV_JITTER: f64 = 1e-6;

/// Maps an image to a fixed-length feature vector.
pub trait Embedder {
    fn id(&self) -> &str;
    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>>;
}

/// Raw pixel values, flattened.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlattenEmbedder;

impl Embedder for FlattenEmbedder {
    fn id(&self) -> &str {
        "flatten"
    }

    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>> {
        Ok(image.data().to_vec())
    }
}

/// Per channel: mean, standard deviation, mean absolute horizontal and
/// vertical differences. Cheap, resolution independent, and sensitive to
/// both colour balance and texture.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsEmbedder;

impl Embedder for StatsEmbedder {
    fn id(&self) -> &str {
        "channel-stats-v1"
    }

    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>> {
        let (h, w, c) = image.dims();
        let mut out = Vec::with_capacity(4 * c);
        for k in 0..c {
            let v = image.channel(k);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mut dx = 0.0;
            let mut dy = 0.0;
            for r in 0..h {
                for col in 0..w {
                    if col + 1 < w {
                        dx += (v[r * w + col + 1] - v[r * w + col]).abs();
                    }
                    if r + 1 < h {
                        dy += (v[(r + 1) * w + col] - v[r * w + col]).abs();
                    }
                }
            }
            let dx = if w > 1 { dx / (h * (w - 1)) as f64 } else { 0.0 };
            let dy = if h > 1 { dy / ((h - 1) * w) as f64 } else { 0.0 };
            out.extend([mean, std, dx, dy]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMetrics {
    pub fid: f64,
    pub embedder_id: String,
    /// Covariances were regularized because a set was smaller than the
    /// embedding dimension.
    pub regularized: bool,
}

fn gaussian_fit(samples: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len();
    let mut mean = DVector::zeros(dim);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})` of two embedded sets.
pub fn fid_from_embeddings(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, bool)> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("FID needs two non-empty sets"));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(shape("embeddings differ in length"));
    }
    let (ma, mut ca) = gaussian_fit(a, dim);
    let (mb, mut cb) = gaussian_fit(b, dim);
    let regularized = a.len() < dim || b.len() < dim;
    if regularized {
        for i in 0..dim {
            ca[(i, i)] += COV_JITTER;
            cb[(i, i)] += COV_JITTER;
        }
    }
    // tr((Σ₁Σ₂)^{1/2}) = tr((√Σ₁ Σ₂ √Σ₁)^{1/2}), a symmetric PSD form
    let sa = sym_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let cross = sym_sqrt(&inner).trace();
    let fid = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok((fid.max(0.0), regularized))
}

pub fn distribution_metrics(pred: &[RasterImage], reference: &[RasterImage], embedder: &dyn Embedder) -> Result<DistributionMetrics> {
    let ea = pred.iter().map(|i| embedder.embed(i)).collect::<Result<Vec<_>>>()?;
    let eb = reference.iter().map(|i| embedder.embed(i)).collect::<Result<Vec<_>>>()?;
    let (fid, regularized) = fid_from_embeddings(&ea, &eb)?;
    Ok(DistributionMetrics { fid, embedder_id: embedder.id().to_string(), regularized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mu, sigma).unwrap();
        (0..n).map(|_| vec![d.sample(&mut rng)]).collect()
    }

    #[test]
    fn one_dimensional_closed_forms() {
        let (f, reg) = fid_from_embeddings(&gaussian(10_000, 0.0, 1.0, 1), &gaussian(10_000, 1.0, 1.0, 2)).unwrap();
        assert!(!reg);
        assert!((f - 1.0).abs() < 0.1, "{f}");
        let (f, _) = fid_from_embeddings(&gaussian(10_000, 0.0, 1.0, 3), &gaussian(10_000, 0.0, 2.0, 4)).unwrap();
        assert!((f - 1.0).abs() < 0.1, "{f}");
    }

    #[test]
    fn identical_sets_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        assert!(fid_from_embeddings(&a, &a).unwrap().0 <= 1e-6);
        let (ab, ba) = (fid_from_embeddings(&a, &b).unwrap().0, fid_from_embeddings(&b, &a).unwrap().0);
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn small_sets_are_regularized() {
        let imgs: Vec<RasterImage> = (0..3).map(|i| RasterImage::filled(4, 4, 3, 0.1 * i as f64).unwrap()).collect();
        let m = distribution_metrics(&imgs, &imgs, &FlattenEmbedder).unwrap();
        assert!(m.regularized);
        assert!(m.fid <= 1e-6);
        assert_eq!(StatsEmbedder.embed(&imgs[1]).unwrap().len(), 12);
        assert!(fid_from_embeddings(&[], &[vec![1.0]]).is_err());
        assert!(fid_from_embeddings(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
    }

    #[test]
    fn stats_embedder_values() {
        let img = RasterImage::from_fn(2, 2, 1, |r, c, _| [[0.0, 1.0], [1.0, 1.0]][r][c]).unwrap();
        let e = StatsEmbedder.embed(&img).unwrap();
        assert_eq!(e[0], 0.75);
        assert!((e[1] - (0.1875f64).sqrt()).abs() < 1e-15);
        assert_eq!(e[2], 0.5);
        assert_eq!(e[3], 0.5);
    }
}
