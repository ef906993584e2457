//! Dual feature extraction at full spatial resolution.
//!
//! A local convolutional encoder and a global windowed-attention encoder
//! each map an `H×W` image to a `C×H×W` feature map; the two are fused by
//! channel concatenation (convolutional block first).

mod attention;
mod conv;

pub use attention::{AttnEncoder, AttnEncoderConfig};
pub use conv::{ConvEncoder, ConvEncoderConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::grid::FeatureMap;
use crate::image::RasterImage;
use crate::nn::{Mat, Param};

/// Channel concatenation `[conv; attn]`.
pub fn fuse(conv_features: &FeatureMap, attn_features: &FeatureMap) -> Result<FeatureMap> {
    let (a, b) = (conv_features, attn_features);
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(shape(format!(
            "cannot fuse {}x{}x{} with {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    FeatureMap::new(a.channels() * 2, a.height(), a.width(), data)
}

/// Which encoders feed the implicit head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Fused,
    ConvOnly,
    AttentionOnly,
}

/// The enabled encoders, run together on one image.
#[derive(Debug, Clone)]
pub struct DualEncoder {
    conv: Option<ConvEncoder>,
    attn: Option<AttnEncoder>,
}

pub(crate) struct DualCache {
    conv: Option<conv::ConvCache>,
    attn: Option<attention::AttnCache>,
}

impl DualEncoder {
    pub fn new(
        backbone: Backbone,
        conv: &ConvEncoderConfig,
        attn: &AttnEncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if backbone == Backbone::Fused && conv.output_channels != attn.output_channels {
            return Err(Error::Config(format!(
                "fused encoders need equal output channels, got {} and {}",
                conv.output_channels, attn.output_channels
            )));
        }
        let conv = match backbone {
            Backbone::Fused | Backbone::ConvOnly => Some(ConvEncoder::new(conv.clone(), rng)?),
            Backbone::AttentionOnly => None,
        };
        let attn = match backbone {
            Backbone::Fused | Backbone::AttentionOnly => Some(AttnEncoder::new(attn.clone(), rng)?),
            Backbone::ConvOnly => None,
        };
        Ok(Self { conv, attn })
    }

    pub fn conv(&self) -> Option<&ConvEncoder> {
        self.conv.as_ref()
    }

    pub fn attention(&self) -> Option<&AttnEncoder> {
        self.attn.as_ref()
    }

    pub fn output_channels(&self) -> usize {
        self.conv.as_ref().map_or(0, |c| c.output_channels()) + self.attn.as_ref().map_or(0, |a| a.output_channels())
    }

    pub fn input_channels(&self) -> usize {
        match (&self.conv, &self.attn) {
            (Some(c), _) => c.config().input_channels,
            (None, Some(a)) => a.config().input_channels,
            (None, None) => 0,
        }
    }

    /// Fused feature map of one image.
    pub fn encode(&self, image: &RasterImage) -> Result<FeatureMap> {
        if image.channels() != self.input_channels() {
            return Err(shape(format!(
                "encoders expect {} channels, image has {}",
                self.input_channels(),
                image.channels()
            )));
        }
        let (h, w, c) = image.dims();
        let (y, _) = self.forward(&Mat::from_vec(h * w, c, image.data().to_vec()), h, w);
        Ok(FeatureMap::from_channels_last(self.output_channels(), h, w, y.data()))
    }

    /// Channels-last `(H·W)×C_total` features.
    pub(crate) fn forward(&self, x: &Mat, h: usize, w: usize) -> (Mat, DualCache) {
        let conv = self.conv.as_ref().map(|e| e.forward(x, h, w));
        let attn = self.attn.as_ref().map(|e| e.forward(x, h, w));
        let features = match (&conv, &attn) {
            (Some((a, _)), Some((b, _))) => Mat::hcat(&[a, b]),
            (Some((a, _)), None) => a.clone(),
            (None, Some((b, _))) => b.clone(),
            (None, None) => unreachable!("at least one encoder is enabled"),
        };
        (features, DualCache { conv: conv.map(|c| c.1), attn: attn.map(|a| a.1) })
    }

    pub(crate) fn backward(&mut self, cache: &DualCache, dy: &Mat) {
        let split = self.conv.as_ref().map_or(0, |c| c.output_channels());
        if let (Some(enc), Some(c)) = (self.conv.as_mut(), cache.conv.as_ref()) {
            enc.backward(c, &dy.col_slice(0, split));
        }
        if let (Some(enc), Some(c)) = (self.attn.as_mut(), cache.attn.as_ref()) {
            enc.backward(c, &dy.col_slice(split, dy.cols()));
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.conv.iter().flat_map(|c| c.params()).collect();
        p.extend(self.attn.iter().flat_map(|a| a.params()));
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.conv.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.attn.iter_mut().flat_map(|a| a.params_mut()));
        p
    }
}
