//! Training objective: mean absolute pixel error plus weighted perceptual
//! feature-matching terms.
//!
//! `total = L1 + Σ_k λ_k · P_k`, where `P_k` is the mean over network `k`'s
//! tap points of the mean squared feature difference between prediction and
//! target.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::image::RasterImage;
use crate::nn::Mat;
use crate::perceptual::{FrozenNet, NetworkStyle};

/// Environment variable naming a directory of `<network>.safetensors` files.
pub const WEIGHTS_ENV: &str = "STAINFIELD_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub implicit: f64,
    pub perceptual: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub enum PerceptualNetwork {
    /// Features are the pixels themselves (one tap).
    Identity,
    Frozen(FrozenNet),
}

#[derive(Debug, Clone)]
pub struct PerceptualSpec {
    pub name: String,
    pub lambda: f64,
    pub network: PerceptualNetwork,
}

impl PerceptualSpec {
    pub fn identity(lambda: f64) -> Self {
        Self { name: "identity".into(), lambda, network: PerceptualNetwork::Identity }
    }

    pub fn frozen(net: FrozenNet, lambda: f64) -> Self {
        Self { name: net.style().name().into(), lambda, network: PerceptualNetwork::Frozen(net) }
    }
}

fn check_pair(pred: &RasterImage, target: &RasterImage) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    Ok(())
}

fn check_specs(specs: &[PerceptualSpec]) -> Result<()> {
    match specs.iter().find(|s| !(s.lambda >= 0.0 && s.lambda.is_finite())) {
        Some(s) => Err(Error::Config(format!("lambda for {} must be finite and non-negative, got {}", s.name, s.lambda))),
        None => Ok(()),
    }
}

/// Mean over pixels and channels of `|pred − target|`.
pub fn implicit_loss(pred: &RasterImage, target: &RasterImage) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(l1(pred.data(), target.data()).0)
}

pub(crate) fn l1(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}

fn network_term(net: &PerceptualNetwork, pred: &RasterImage, target: &RasterImage, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (h, w, c) = pred.dims();
    match net {
        PerceptualNetwork::Identity => {
            let n = pred.data().len() as f64;
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(if want_grad { pred.data().len() } else { 0 });
            for (p, t) in pred.data().iter().zip(target.data()) {
                loss += (p - t) * (p - t);
                if want_grad {
                    grad.push(2.0 * (p - t) / n);
                }
            }
            (loss / n, want_grad.then_some(grad))
        }
        PerceptualNetwork::Frozen(net) => {
            let xp = Mat::from_vec(h * w, c, pred.data().to_vec());
            let xt = Mat::from_vec(h * w, c, target.data().to_vec());
            let tp = net.forward(&xp, h, w);
            let tt = net.forward(&xt, h, w);
            let ntaps = tp.feats.len() as f64;
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(tp.feats.len());
            for (fp, ft) in tp.feats.iter().zip(&tt.feats) {
                let n = fp.data().len() as f64;
                let mut g = Mat::zeros(fp.rows(), fp.cols());
                let mut s = 0.0;
                for ((gv, a), b) in g.data_mut().iter_mut().zip(fp.data()).zip(ft.data()) {
                    s += (a - b) * (a - b);
                    *gv = 2.0 * (a - b) / (n * ntaps);
                }
                loss += s / n / ntaps;
                grads.push(g);
            }
            let grad = want_grad.then(|| net.backward(&tp, &grads).into_vec());
            (loss, grad)
        }
    }
}

/// `Σ_k λ_k · P_k`; an empty spec list gives `0`.
pub fn perceptual_loss(pred: &RasterImage, target: &RasterImage, specs: &[PerceptualSpec]) -> Result<f64> {
    check_pair(pred, target)?;
    check_specs(specs)?;
    Ok(specs
        .iter()
        .filter(|s| s.lambda > 0.0)
        .map(|s| s.lambda * network_term(&s.network, pred, target, false).0)
        .sum())
}

pub fn total_loss(pred: &RasterImage, target: &RasterImage, specs: &[PerceptualSpec]) -> Result<LossBreakdown> {
    let implicit = implicit_loss(pred, target)?;
    let perceptual = perceptual_loss(pred, target, specs)?;
    Ok(LossBreakdown { implicit, perceptual, total: implicit + perceptual })
}

/// Loss and its gradient with respect to every value of `pred`.
pub fn total_loss_with_grad(
    pred: &RasterImage,
    target: &RasterImage,
    specs: &[PerceptualSpec],
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_pair(pred, target)?;
    check_specs(specs)?;
    let (implicit, mut grad) = l1(pred.data(), target.data());
    let mut perceptual = 0.0;
    for s in specs.iter().filter(|s| s.lambda > 0.0) {
        let (v, g) = network_term(&s.network, pred, target, true);
        perceptual += s.lambda * v;
        for (a, b) in grad.iter_mut().zip(g.expect("requested")) {
            *a += s.lambda * b;
        }
    }
    Ok((LossBreakdown { implicit, perceptual, total: implicit + perceptual }, grad))
}

/// Where perceptual network weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum PerceptualWeights {
    /// `$STAINFIELD_WEIGHTS_DIR/<name>.safetensors` when the variable is set,
    /// otherwise the identity network.
    #[default]
    Auto,
    Identity,
    Seeded { seed: u64 },
    Directory { path: PathBuf },
}

/// Structured loss configuration (`loss.lambdas`, `loss.perceptual_networks`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambdas: Vec<f64>,
    pub perceptual_networks: Vec<String>,
    pub weights: PerceptualWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 1.0, 0.0],
            perceptual_networks: vec!["alexnet-style".into(), "vgg-style".into(), "resnet50-style".into()],
            weights: PerceptualWeights::Auto,
        }
    }
}

impl LossConfig {
    /// No perceptual regularization.
    pub fn pixel_only() -> Self {
        Self { lambdas: vec![0.0; 3], ..Self::default() }
    }

    /// Builds the perceptual terms with non-zero weight for images with
    /// `channels` channels.
    pub fn build(&self, channels: usize) -> Result<Vec<PerceptualSpec>> {
        if self.lambdas.len() != self.perceptual_networks.len() {
            return Err(Error::Config(format!(
                "{} lambdas for {} perceptual networks",
                self.lambdas.len(),
                self.perceptual_networks.len()
            )));
        }
        let weights = match &self.weights {
            PerceptualWeights::Auto => match std::env::var_os(WEIGHTS_ENV) {
                Some(dir) => PerceptualWeights::Directory { path: dir.into() },
                None => PerceptualWeights::Identity,
            },
            other => other.clone(),
        };
        let mut specs = Vec::new();
        for (k, (name, &lambda)) in self.perceptual_networks.iter().zip(&self.lambdas).enumerate() {
            let style: NetworkStyle = name.parse()?;
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::Config(format!("lambda for {name} must be finite and non-negative")));
            }
            if lambda == 0.0 {
                continue;
            }
            let spec = match &weights {
                PerceptualWeights::Identity | PerceptualWeights::Auto => {
                    PerceptualSpec { name: name.clone(), lambda, network: PerceptualNetwork::Identity }
                }
                PerceptualWeights::Seeded { seed } => {
                    PerceptualSpec::frozen(FrozenNet::seeded(style, channels, seed.wrapping_add(k as u64)), lambda)
                }
                PerceptualWeights::Directory { path } => {
                    let file = path.join(format!("{name}.safetensors"));
                    PerceptualSpec::frozen(FrozenNet::load(style, channels, &file)?, lambda)
                }
            };
            specs.push(spec);
        }
        Ok(specs)
    }
}
