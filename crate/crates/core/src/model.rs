//! The complete translation model: encoders, coordinate embedding and MLP
//! head as one checkpointable object.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{TensorArchive, FORMAT_VERSION};
use crate::encoders::{AttnEncoderConfig, Backbone, ConvEncoderConfig, DualEncoder};
use crate::error::{shape, Error, Result};
use crate::grid::{axis_coordinate, make_grid, nearest_pixel, window_len, CoordinateGrid, FeatureMap};
use crate::head::ImplicitHead;
use crate::image::RasterImage;
use crate::losses::{l1, total_loss_with_grad, LossBreakdown, PerceptualSpec};
use crate::nn::unfold::{Neighborhood, Padding};
use crate::nn::{Mat, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    /// Neighborhood radius `r`; windows are `(2r+1)×(2r+1)`.
    pub radius: usize,
    pub backbone: Backbone,
    pub conv: ConvEncoderConfig,
    pub attention: AttnEncoderConfig,
    /// Positional embedding width `p`.
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Seed for parameter initialization.
    pub seed: u64,
    /// Coordinates evaluated per head batch; affects memory only.
    pub coord_batch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            output_channels: 3,
            radius: 1,
            backbone: Backbone::Fused,
            conv: ConvEncoderConfig::default(),
            attention: AttnEncoderConfig::default(),
            embed_dim: 32,
            hidden: vec![256; 4],
            seed: 0,
            coord_batch: 16384,
        }
    }
}

impl ModelConfig {
    fn check(&self) -> Result<()> {
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let uses_conv = self.backbone != Backbone::AttentionOnly;
        let uses_attn = self.backbone != Backbone::ConvOnly;
        if uses_conv && self.conv.input_channels != self.input_channels {
            return Err(Error::Config(format!(
                "conv.input_channels {} differs from input_channels {}",
                self.conv.input_channels, self.input_channels
            )));
        }
        if uses_attn && self.attention.input_channels != self.input_channels {
            return Err(Error::Config(format!(
                "attention.input_channels {} differs from input_channels {}",
                self.attention.input_channels, self.input_channels
            )));
        }
        if self.coord_batch == 0 {
            return Err(Error::Config("coord_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Encoders plus implicit head.
#[derive(Debug, Clone)]
pub struct ImplicitModel {
    config: ModelConfig,
    encoder: DualEncoder,
    head: ImplicitHead,
}

impl ImplicitModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = DualEncoder::new(config.backbone, &config.conv, &config.attention, &mut rng)?;
        let d = window_len(encoder.output_channels(), config.radius);
        let head = ImplicitHead::new(d, config.embed_dim, &config.hidden, config.output_channels, &mut rng)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { config, encoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &DualEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &ImplicitHead {
        &self.head
    }

    pub fn radius(&self) -> usize {
        self.config.radius
    }

    /// Fused feature channels `C_total`.
    pub fn feature_channels(&self) -> usize {
        self.encoder.output_channels()
    }

    fn check_source(&self, image: &RasterImage) -> Result<()> {
        if image.channels() != self.config.input_channels {
            return Err(shape(format!(
                "model expects {} input channels, image has {}",
                self.config.input_channels,
                image.channels()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, image: &RasterImage) -> Result<FeatureMap> {
        self.check_source(image)?;
        self.encoder.encode(image)
    }

    /// Channels-last features of one image.
    pub(crate) fn encode_rows(&self, image: &RasterImage) -> Mat {
        let (h, w, c) = image.dims();
        self.encoder.forward(&Mat::from_vec(h * w, c, image.data().to_vec()), h, w).0
    }

    /// Head outputs (`Q×c`) for query points, each with the feature pixel
    /// whose window it reads and its own coordinate.
    pub(crate) fn predict_points(&self, features: &Mat, h: usize, w: usize, pixels: &[usize], coords: &[[f64; 2]]) -> Mat {
        debug_assert_eq!(pixels.len(), coords.len());
        let c = self.config.output_channels;
        let mut out = Vec::with_capacity(pixels.len() * c);
        for (px, co) in pixels.chunks(self.config.coord_batch).zip(coords.chunks(self.config.coord_batch)) {
            let nb = Neighborhood::new(h, w, self.config.radius, Padding::Replicate, Some(px));
            let windows = nb.gather(features);
            let cm = Mat::from_vec(co.len(), 2, co.iter().flatten().copied().collect());
            out.extend(self.head.forward(&windows, &cm).0.into_vec());
        }
        Mat::from_vec(pixels.len(), c, out)
    }

    /// Raw head outputs on `grid`: the encoders run once on `image`, then
    /// every grid point reads the window around its nearest input pixel.
    pub fn predict_grid_raw(&self, image: &RasterImage, grid: &CoordinateGrid) -> Result<RasterImage> {
        self.check_source(image)?;
        let (h, w, _) = image.dims();
        let features = self.encode_rows(image);
        let pixels: Vec<usize> = grid
            .coords()
            .iter()
            .map(|&p| {
                let (r, c) = nearest_pixel(p, h, w);
                r * w + c
            })
            .collect();
        let y = self.predict_points(&features, h, w, &pixels, grid.coords());
        RasterImage::from_raw(grid.height(), grid.width(), self.config.output_channels, y.into_vec())
    }

    /// Prediction on `grid`, clamped to `[0, 1]`.
    pub fn predict_grid(&self, image: &RasterImage, grid: &CoordinateGrid) -> Result<RasterImage> {
        Ok(self.predict_grid_raw(image, grid)?.clamped())
    }

    /// Translation at the input's own resolution.
    pub fn translate(&self, image: &RasterImage) -> Result<RasterImage> {
        self.predict_grid(image, &make_grid(image.height(), image.width())?)
    }

    /// Loss of the native-resolution prediction against `target`.
    pub fn evaluate_loss(&self, source: &RasterImage, target: &RasterImage, specs: &[PerceptualSpec]) -> Result<LossBreakdown> {
        let pred = self.predict_grid_raw(source, &make_grid(source.height(), source.width())?)?;
        crate::losses::total_loss(&pred, target, specs)
    }

    /// Forward and backward pass on one pair; parameter gradients are added
    /// to whatever they already hold.
    ///
    /// With `pixels = None` every pixel is predicted and the full objective is
    /// used. With a subset only those pixels are predicted and the loss is the
    /// pixel L1 over them (perceptual terms need the whole image).
    pub fn loss_and_grad(
        &mut self,
        source: &RasterImage,
        target: &RasterImage,
        specs: &[PerceptualSpec],
        pixels: Option<&[usize]>,
    ) -> Result<LossBreakdown> {
        self.check_source(source)?;
        let (h, w, c_in) = source.dims();
        if target.height() != h || target.width() != w || target.channels() != self.config.output_channels {
            return Err(shape(format!("target {:?} does not match source {h}x{w}", target.dims())));
        }
        let all: Vec<usize>;
        let pixels = match pixels {
            Some(p) => {
                if p.is_empty() || p.iter().any(|&i| i >= h * w) {
                    return Err(shape("sampled pixel indices out of range"));
                }
                p
            }
            None => {
                all = (0..h * w).collect();
                &all
            }
        };
        let coords: Vec<[f64; 2]> =
            pixels.iter().map(|&i| [axis_coordinate(i % w, w), axis_coordinate(i / w, h)]).collect();
        let (features, enc_cache) = self.encoder.forward(&Mat::from_vec(h * w, c_in, source.data().to_vec()), h, w);
        let pred = self.predict_points(&features, h, w, pixels, &coords);
        let c = self.config.output_channels;
        if !pred.data().iter().all(|v| v.is_finite()) {
            return Ok(LossBreakdown { implicit: f64::NAN, perceptual: f64::NAN, total: f64::NAN });
        }

        let (breakdown, dpred) = if pixels.len() == h * w && pixels.iter().enumerate().all(|(k, &i)| k == i) {
            let pred = RasterImage::from_raw(h, w, c, pred.into_vec())?;
            total_loss_with_grad(&pred, target, specs)?
        } else {
            let tgt: Vec<f64> = pixels.iter().flat_map(|&i| target.data()[i * c..(i + 1) * c].iter().copied()).collect();
            let (loss, grad) = l1(pred.data(), &tgt);
            (LossBreakdown { implicit: loss, perceptual: 0.0, total: loss }, grad)
        };
        if !breakdown.total.is_finite() {
            return Ok(breakdown);
        }

        let batch = self.config.coord_batch;
        let mut dfeat = Mat::zeros(h * w, features.cols());
        for (k, (px, co)) in pixels.chunks(batch).zip(coords.chunks(batch)).enumerate() {
            let nb = Neighborhood::new(h, w, self.config.radius, Padding::Replicate, Some(px));
            let windows = nb.gather(&features);
            let cm = Mat::from_vec(co.len(), 2, co.iter().flatten().copied().collect());
            let (_, cache) = self.head.forward(&windows, &cm);
            let start = k * batch * c;
            let dy = Mat::from_vec(px.len(), c, dpred[start..start + px.len() * c].to_vec());
            let dwin = self.head.backward(&cache, &dy);
            dfeat.add_assign(&nb.scatter(&dwin));
        }
        self.encoder.backward(&enc_cache, &dfeat);
        Ok(breakdown)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn to_archive(&self, metadata: &BTreeMap<String, String>) -> TensorArchive {
        let mut a = TensorArchive::new();
        for p in self.params() {
            a.insert(p.name(), p.shape().to_vec(), p.value().to_vec());
        }
        for (k, v) in metadata {
            a.set_metadata(k.clone(), v.clone());
        }
        a.set_metadata("format_version", FORMAT_VERSION);
        a.set_metadata("model_config", serde_json::to_string(&self.config).expect("config serializes"));
        a
    }

    /// Rebuilds a model from an archive. Every failure names the field that
    /// could not be applied.
    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let ckpt = |field: &str, message: String| Error::Checkpoint { field: field.into(), message };
        match archive.metadata("format_version") {
            Some(FORMAT_VERSION) => {}
            Some(v) => return Err(ckpt("format_version", format!("unsupported version {v}"))),
            None => return Err(ckpt("format_version", "missing".into())),
        }
        let raw = archive.metadata("model_config").ok_or_else(|| ckpt("model_config", "missing".into()))?;
        let config: ModelConfig = serde_json::from_str(raw).map_err(|e| ckpt("model_config", e.to_string()))?;
        let mut model = Self::new(config).map_err(|e| ckpt("model_config", e.to_string()))?;
        let mut expected = std::collections::BTreeSet::new();
        for p in model.params_mut() {
            let name = p.name().to_string();
            let t = archive.tensor(&name).ok_or_else(|| ckpt(&name, "missing tensor".into()))?;
            if t.shape != p.shape() {
                return Err(ckpt(&name, format!("shape {:?} does not match model shape {:?}", t.shape, p.shape())));
            }
            p.value_mut().copy_from_slice(&t.data);
            expected.insert(name);
        }
        if let Some(extra) = archive.names().find(|n| !expected.contains(*n)) {
            return Err(ckpt(extra, "tensor not used by the model".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &BTreeMap<String, String>) -> Result<()> {
        self.to_archive(metadata).write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}
