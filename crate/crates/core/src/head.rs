//! The implicit prediction head: a learnable coordinate embedding appended to
//! a flattened feature window, mapped to a pixel value by a ReLU MLP.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::nn::layers::{relu, relu_backward, Linear};
use crate::nn::{Mat, Param};

/// Learnable linear map `[x, y] ↦ W·[x, y] + b`.
#[derive(Debug, Clone)]
pub struct PositionalEmbedding {
    linear: Linear,
}

impl PositionalEmbedding {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Self { linear: Linear::lecun("head.embed", 2, dim, rng) }
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn embed(&self, coord: [f64; 2]) -> Result<Vec<f64>> {
        if !coord.iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("non-finite coordinate {coord:?}")));
        }
        Ok(self.linear.forward(&Mat::from_vec(1, 2, coord.to_vec())).into_vec())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.linear.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.linear.params_mut()
    }
}

/// Fully connected ReLU network; the output layer is linear.
#[derive(Debug, Clone)]
pub struct ImplicitMlp {
    layers: Vec<Linear>,
}

impl ImplicitMlp {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(invalid("MLP widths must be positive"));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let name = format!("head.mlp.layer{i}");
                if i == last {
                    Linear::lecun(&name, io[0], io[1], rng)
                } else {
                    Linear::he(&name, io[0], io[1], rng)
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Linear::output_dim).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Linear::params_mut).collect()
    }
}

pub(crate) struct HeadCache {
    coords: Mat,
    /// Input of every MLP layer; `acts[i + 1]` is layer `i`'s activated output.
    acts: Vec<Mat>,
}

/// Embedding plus MLP over `d`-long feature windows.
#[derive(Debug, Clone)]
pub struct ImplicitHead {
    feature_dim: usize,
    embedding: PositionalEmbedding,
    mlp: ImplicitMlp,
}

impl ImplicitHead {
    pub fn new(feature_dim: usize, embed_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if embed_dim == 0 {
            return Err(invalid("embedding width must be positive"));
        }
        let embedding = PositionalEmbedding::new(embed_dim, rng);
        let mlp = ImplicitMlp::new(feature_dim + embed_dim, hidden, output_dim, rng)?;
        Self::from_parts(feature_dim, embedding, mlp)
    }

    pub fn from_parts(feature_dim: usize, embedding: PositionalEmbedding, mlp: ImplicitMlp) -> Result<Self> {
        if mlp.input_dim() != feature_dim + embedding.output_dim() {
            return Err(invalid(format!(
                "MLP input {} does not equal window length {} plus embedding width {}",
                mlp.input_dim(),
                feature_dim,
                embedding.output_dim()
            )));
        }
        Ok(Self { feature_dim, embedding, mlp })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn embedding(&self) -> &PositionalEmbedding {
        &self.embedding
    }

    pub fn mlp(&self) -> &ImplicitMlp {
        &self.mlp
    }

    /// Raw (unclamped) prediction for one coordinate and its feature window.
    pub fn predict_pixel(&self, coord: [f64; 2], window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.feature_dim {
            return Err(invalid(format!("window has {} values, head expects {}", window.len(), self.feature_dim)));
        }
        if !coord.iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("non-finite coordinate {coord:?}")));
        }
        let (y, _) = self.forward(&Mat::from_vec(1, self.feature_dim, window.to_vec()), &Mat::from_vec(1, 2, coord.to_vec()));
        Ok(y.into_vec())
    }

    /// Batched forward over `Q×d` windows and `Q×2` coordinates.
    pub(crate) fn forward(&self, windows: &Mat, coords: &Mat) -> (Mat, HeadCache) {
        let emb = self.embedding.linear.forward(coords);
        let mut acts = vec![Mat::hcat(&[windows, &emb])];
        let last = self.mlp.layers.len() - 1;
        for (i, layer) in self.mlp.layers.iter().enumerate() {
            let mut z = layer.forward(&acts[i]);
            if i < last {
                relu(&mut z);
            }
            acts.push(z);
        }
        let y = acts.pop().expect("output layer");
        (y, HeadCache { coords: coords.clone(), acts })
    }

    /// Accumulates parameter gradients and returns `∂/∂windows`.
    pub(crate) fn backward(&mut self, cache: &HeadCache, dy: &Mat) -> Mat {
        let last = self.mlp.layers.len() - 1;
        let mut d = dy.clone();
        for i in (0..=last).rev() {
            if i < last {
                relu_backward(&mut d, &cache.acts[i + 1]);
            }
            d = self.mlp.layers[i].backward(&cache.acts[i], &d);
        }
        let demb = d.col_slice(self.feature_dim, d.cols());
        self.embedding.linear.accumulate(&cache.coords, &demb);
        d.col_slice(0, self.feature_dim)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.embedding.params();
        p.extend(self.mlp.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.embedding.params_mut();
        p.extend(self.mlp.params_mut());
        p
    }
}
