//! Local feature extractor: a stack of stride-1 `3×3` convolutions with
//! zero "same" padding and no pooling, so every layer keeps `H×W`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FeatureMap;
use crate::image::RasterImage;
use crate::nn::layers::{relu, relu_backward, Linear};
use crate::nn::unfold::{Neighborhood, Padding};
use crate::nn::{Mat, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvEncoderConfig {
    pub num_layers: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    /// Per-layer output widths; the last entry must equal `output_channels`.
    /// Defaults to a doubling ramp from 32 every two layers, capped at
    /// `output_channels`.
    pub channel_schedule: Option<Vec<usize>>,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        Self { num_layers: 12, input_channels: 3, output_channels: 64, channel_schedule: None }
    }
}

impl ConvEncoderConfig {
    pub fn widths(&self) -> Result<Vec<usize>> {
        if self.num_layers == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("conv encoder needs at least one layer and non-zero channels".into()));
        }
        let widths = match &self.channel_schedule {
            Some(s) => {
                if s.len() != self.num_layers || s.last() != Some(&self.output_channels) || s.contains(&0) {
                    return Err(Error::Config(format!(
                        "channel_schedule {s:?} must have {} non-zero entries ending in {}",
                        self.num_layers, self.output_channels
                    )));
                }
                s.clone()
            }
            None => {
                let mut w: Vec<usize> = (0..self.num_layers)
                    .map(|i| (32usize << (i / 2).min(16)).min(self.output_channels))
                    .collect();
                *w.last_mut().expect("num_layers > 0") = self.output_channels;
                w
            }
        };
        Ok(widths)
    }
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    config: ConvEncoderConfig,
    layers: Vec<Linear>,
}

pub(crate) struct ConvCache {
    nb: Neighborhood,
    cols: Vec<Mat>,
    outs: Vec<Mat>,
}

impl ConvEncoder {
    pub fn new(config: ConvEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let widths = config.widths()?;
        let mut layers = Vec::with_capacity(widths.len());
        let mut cin = config.input_channels;
        for (i, &cout) in widths.iter().enumerate() {
            layers.push(Linear::he(&format!("conv.layer{i}"), cin * 9, cout, rng));
            cin = cout;
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ConvEncoderConfig {
        &self.config
    }

    pub fn output_channels(&self) -> usize {
        self.config.output_channels
    }

    /// Runs the encoder on one image.
    pub fn encode(&self, image: &RasterImage) -> Result<FeatureMap> {
        if image.channels() != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv encoder expects {} channels, image has {}",
                self.config.input_channels,
                image.channels()
            )));
        }
        let (h, w, c) = image.dims();
        let x = Mat::from_vec(h * w, c, image.data().to_vec());
        let (y, _) = self.forward(&x, h, w);
        Ok(FeatureMap::from_channels_last(self.output_channels(), h, w, y.data()))
    }

    /// `x` is `(H·W)×C_in`; returns `(H·W)×C_out`. ReLU follows every layer
    /// but the last.
    pub(crate) fn forward(&self, x: &Mat, h: usize, w: usize) -> (Mat, ConvCache) {
        let nb = Neighborhood::new(h, w, 1, Padding::Zero, None);
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let unf = nb.gather(&cur);
            let mut y = layer.forward(&unf);
            if i + 1 < self.layers.len() {
                relu(&mut y);
            }
            cols.push(unf);
            outs.push(y.clone());
            cur = y;
        }
        (cur, ConvCache { nb, cols, outs })
    }

    /// Accumulates parameter gradients; the image gradient is not needed.
    pub(crate) fn backward(&mut self, cache: &ConvCache, dy: &Mat) {
        let n = self.layers.len();
        let mut grad = dy.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                relu_backward(&mut grad, &cache.outs[i]);
            }
            if i == 0 {
                self.layers[i].accumulate(&cache.cols[i], &grad);
            } else {
                let dcols = self.layers[i].backward(&cache.cols[i], &grad);
                grad = cache.nb.scatter(&dcols);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_ramps_to_output() {
        let w = ConvEncoderConfig::default().widths().unwrap();
        assert_eq!(w.len(), 12);
        assert_eq!(&w[..4], &[32, 32, 64, 64]);
        assert_eq!(*w.last().unwrap(), 64);
        let wide = ConvEncoderConfig { output_channels: 256, ..Default::default() }.widths().unwrap();
        assert_eq!(wide, vec![32, 32, 64, 64, 128, 128, 256, 256, 256, 256, 256, 256]);
        let narrow = ConvEncoderConfig { output_channels: 16, num_layers: 3, ..Default::default() };
        assert_eq!(narrow.widths().unwrap(), vec![16, 16, 16]);
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let cfg = ConvEncoderConfig { num_layers: 2, channel_schedule: Some(vec![8, 32]), ..Default::default() };
        assert!(cfg.widths().is_err());
    }

    #[test]
    fn keeps_resolution_and_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ConvEncoder::new(ConvEncoderConfig::default(), &mut rng).unwrap();
        let img = RasterImage::filled(16, 16, 3, 0.4).unwrap();
        let fm = enc.encode(&img).unwrap();
        assert_eq!((fm.channels(), fm.height(), fm.width()), (64, 16, 16));
        let tiny = RasterImage::filled(1, 2, 3, 0.4).unwrap();
        let fm = enc.encode(&tiny).unwrap();
        assert_eq!((fm.height(), fm.width()), (1, 2));
        let gray = RasterImage::filled(4, 4, 1, 0.4).unwrap();
        assert!(enc.encode(&gray).is_err());
    }

    #[test]
    fn zero_input_without_bias_gives_zero_first_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ConvEncoderConfig { num_layers: 1, output_channels: 8, ..Default::default() };
        let enc = ConvEncoder::new(cfg, &mut rng).unwrap();
        let fm = enc.encode(&RasterImage::filled(6, 6, 3, 0.0).unwrap()).unwrap();
        assert!(fm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ConvEncoderConfig { num_layers: 4, output_channels: 8, ..Default::default() };
        let enc = ConvEncoder::new(cfg, &mut rng).unwrap();
        let base: Vec<f64> = (0..36 * 36 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let pick = |dy: usize, dx: usize| {
            RasterImage::from_fn(32, 32, 3, |y, x, c| base[((y + dy) * 36 + x + dx) * 3 + c]).unwrap()
        };
        // `b` is `a` shifted by two pixels along both axes.
        let a = enc.encode(&pick(2, 2)).unwrap();
        let b = enc.encode(&pick(0, 0)).unwrap();
        for c in 0..8 {
            for y in 8..24 {
                for x in 8..24 {
                    assert!((a.get(c, y, x) - b.get(c, y + 2, x + 2)).abs() < 1e-5);
                }
            }
        }
    }
}
