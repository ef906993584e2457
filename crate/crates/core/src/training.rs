//! Paired patches and the optimization loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::image::RasterImage;
use crate::losses::{LossConfig, PerceptualSpec};
use crate::model::{ImplicitModel, ModelConfig};
use crate::nn::{Adam, AdamConfig};

/// A pixel-aligned source/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPatch {
    pub source: RasterImage,
    pub target: RasterImage,
    pub id: String,
}

impl PairedPatch {
    pub fn new(source: RasterImage, target: RasterImage, id: impl Into<String>) -> Result<Self> {
        if source.height() != target.height() || source.width() != target.width() {
            return Err(shape(format!("source {:?} and target {:?} are not aligned", source.dims(), target.dims())));
        }
        Ok(Self { source, target, id: id.into() })
    }
}

/// Cuts aligned `patch×patch` crops in raster order. Crops that would run
/// past the border are dropped; a patch larger than the image yields nothing.
pub fn make_patches(pair: (&RasterImage, &RasterImage), patch: usize, stride: usize, id: &str) -> Result<Vec<PairedPatch>> {
    let (src, tgt) = pair;
    if src.height() != tgt.height() || src.width() != tgt.width() {
        return Err(shape("patch pair is not aligned"));
    }
    if patch == 0 || stride == 0 {
        return Err(invalid("patch and stride must be positive"));
    }
    let (h, w) = (src.height(), src.width());
    if patch > h || patch > w {
        log::warn!("patch {patch} exceeds image {h}x{w}; no patches produced");
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for y in (0..=h - patch).step_by(stride) {
        for x in (0..=w - patch).step_by(stride) {
            out.push(PairedPatch {
                source: src.crop(y, x, patch, patch)?,
                target: tgt.crop(y, x, patch, patch)?,
                id: format!("{id}_y{y}_x{x}"),
            });
        }
    }
    Ok(out)
}

/// Which pixels of a patch contribute to a step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CoordSampling {
    #[default]
    FullGrid,
    /// A uniform subset of `ceil(fraction·H·W)` pixels, redrawn every step.
    RandomFraction { fraction: f64 },
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `1` down to `final_fraction` at `max_steps`.
    Cosine { final_fraction: f64 },
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Cosine { final_fraction } => {
                let t = (step as f64 / total.max(1) as f64).min(1.0);
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps, applied on top of `epochs`.
    pub max_steps: Option<usize>,
    /// Neighborhood radius; overrides `model.radius`.
    pub radius: usize,
    pub coord_sampling: CoordSampling,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            batch_size: 4,
            epochs: 200,
            max_steps: None,
            radius: 1,
            coord_sampling: CoordSampling::FullGrid,
            seed: 0,
            checkpoint_every: None,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let CoordSampling::RandomFraction { fraction } = self.coord_sampling {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!("sampling fraction must lie in (0, 1], got {fraction}")));
            }
        }
        if let LrSchedule::Cosine { final_fraction } = self.lr_schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(Error::Config(format!("final_fraction must lie in [0, 1], got {final_fraction}")));
            }
            if self.max_steps.is_none() {
                return Err(Error::Config("a cosine schedule needs max_steps".into()));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// The model configuration with the training radius applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { radius: self.radius, ..self.model.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub implicit_loss: f64,
    pub perceptual_loss: f64,
    pub total: f64,
}

/// Owns the model, the optimizer state and the loss history.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: ImplicitModel,
    specs: Vec<PerceptualSpec>,
    adam: Adam,
    rng: ChaCha8Rng,
    history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ImplicitModel::new(config.model_config())?;
        Self::with_model(model, config)
    }

    /// Continues from an existing model; its architecture wins over
    /// `config.model`.
    pub fn with_model(model: ImplicitModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let specs = config.loss.build(model.config().output_channels)?;
        Ok(Self {
            adam: Adam::new(config.learning_rate, config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            model,
            specs,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ImplicitModel {
        &self.model
    }

    pub fn into_model(self) -> ImplicitModel {
        self.model
    }

    pub fn specs(&self) -> &[PerceptualSpec] {
        &self.specs
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    /// One optimizer step on `batch`: gradients are averaged over the patches.
    pub fn step(&mut self, batch: &[&PairedPatch]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let step = self.history.len();
        self.model.zero_grad();
        let (mut imp, mut per, mut tot) = (0.0, 0.0, 0.0);
        for p in batch {
            let pixels = match self.config.coord_sampling {
                CoordSampling::FullGrid => None,
                CoordSampling::RandomFraction { fraction } => {
                    let n = p.source.height() * p.source.width();
                    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
                    Some(rand::seq::index::sample(&mut self.rng, n, k).into_vec())
                }
            };
            let b = self.model.loss_and_grad(&p.source, &p.target, &self.specs, pixels.as_deref())?;
            imp += b.implicit;
            per += b.perceptual;
            tot += b.total;
        }
        let n = batch.len() as f64;
        let record = LossRecord { step, implicit_loss: imp / n, perceptual_loss: per / n, total: tot / n };
        if !record.total.is_finite() {
            return Err(Error::NonFiniteLoss { step, batch: batch.iter().map(|p| p.id.clone()).collect() });
        }
        let mut params = self.model.params_mut();
        for p in params.iter_mut() {
            p.scale_grad(1.0 / n);
        }
        let total = self.config.max_steps.unwrap_or(usize::MAX);
        self.adam.set_learning_rate(self.config.learning_rate * self.config.lr_schedule.factor(step, total));
        self.adam.step(params);
        self.history.push(record);
        Ok(record)
    }

    /// Runs `epochs` passes (or until `max_steps`) over `dataset`, reshuffled
    /// every epoch. `after_step` sees the trainer after each update.
    pub fn run(&mut self, dataset: &[PairedPatch], mut after_step: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        if dataset.is_empty() {
            return Err(invalid("empty training set"));
        }
        let cin = self.model.config().input_channels;
        let cout = self.model.config().output_channels;
        if let Some(p) = dataset.iter().find(|p| p.source.channels() != cin || p.target.channels() != cout) {
            return Err(shape(format!("pair {} does not have {cin} source and {cout} target channels", p.id)));
        }
        let limit = self.config.max_steps.unwrap_or(usize::MAX);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.batch_size) {
                if self.history.len() >= limit {
                    return Ok(());
                }
                let batch: Vec<&PairedPatch> = chunk.iter().map(|&i| &dataset[i]).collect();
                let r = self.step(&batch)?;
                log::debug!("step {} loss {:.6}", r.step, r.total);
                after_step(self)?;
            }
        }
        Ok(())
    }

    /// Checkpoint metadata describing how the weights were produced.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("train_config".into(), serde_json::to_string(&self.config).expect("config serializes"));
        m.insert("optimizer".into(), "adam".into());
        m.insert("steps".into(), self.history.len().to_string());
        m
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.model.save(path, &self.metadata())
    }

    pub fn write_history(&self, path: impl AsRef<Path>) -> Result<()> {
        write_history(&self.history, path)
    }
}

/// Writes `step,implicit_loss,perceptual_loss,total` rows.
pub fn write_history(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in history {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "loss history", message: e.to_string() }
}

/// Trained model plus the per-step loss history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ImplicitModel,
    pub history: Vec<LossRecord>,
}

pub fn train_model(dataset: &[PairedPatch], config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone())?;
    t.run(dataset, |_| Ok(()))?;
    Ok(TrainOutcome { history: t.history.clone(), model: t.model })
}

/// Moving average over `window` steps (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
