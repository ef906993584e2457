//! Frozen feature networks used by the perceptual loss.
//!
//! Three small fully-convolutional styles mirror the usual choices (an
//! AlexNet-like wide first kernel, a VGG-like stack of `3×3` pairs, a
//! ResNet-like residual stack). Weights are either loaded from a tensor
//! archive or drawn from a fixed seed; they are never trained. Because the
//! networks are fully convolutional they accept any input size.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorArchive;
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::unfold::{Neighborhood, Padding};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkStyle {
    #[serde(rename = "alexnet-style")]
    Alexnet,
    #[serde(rename = "vgg-style")]
    Vgg,
    #[serde(rename = "resnet50-style")]
    Resnet,
}

impl NetworkStyle {
    pub fn name(self) -> &'static str {
        match self {
            NetworkStyle::Alexnet => "alexnet-style",
            NetworkStyle::Vgg => "vgg-style",
            NetworkStyle::Resnet => "resnet50-style",
        }
    }
}

impl FromStr for NetworkStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alexnet-style" => Ok(NetworkStyle::Alexnet),
            "vgg-style" => Ok(NetworkStyle::Vgg),
            "resnet50-style" => Ok(NetworkStyle::Resnet),
            other => Err(Error::Config(format!("unknown perceptual network `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv { layer: Linear, radius: usize },
    Relu,
    AvgPool2,
    ResidualStart,
    ResidualEnd,
    Tap,
}

/// A frozen feature network; activations at its tap points are compared by
/// the perceptual loss.
#[derive(Debug, Clone)]
pub struct FrozenNet {
    style: NetworkStyle,
    ops: Vec<Op>,
}

enum OpCache {
    Conv { nb: Neighborhood },
    Relu(Mat),
    Pool { h: usize, w: usize, pooled: bool },
    None,
}

/// Activations at each tap with their spatial size.
pub(crate) struct Taps {
    pub feats: Vec<Mat>,
    caches: Vec<OpCache>,
}

impl FrozenNet {
    fn layout(style: NetworkStyle, channels: usize) -> Vec<(usize, usize, usize)> {
        // (in, out, radius) per conv, in forward order
        match style {
            NetworkStyle::Alexnet => vec![(channels, 16, 2), (16, 32, 1)],
            NetworkStyle::Vgg => vec![(channels, 16, 1), (16, 16, 1), (16, 32, 1), (32, 32, 1)],
            NetworkStyle::Resnet => vec![
                (channels, 16, 1),
                (16, 16, 1),
                (16, 16, 1),
                (16, 32, 1),
                (32, 32, 1),
                (32, 32, 1),
            ],
        }
    }

    fn assemble(style: NetworkStyle, mut convs: Vec<(Linear, usize)>) -> Self {
        let mut take = || {
            let (layer, radius) = convs.remove(0);
            Op::Conv { layer, radius }
        };
        use Op::*;
        let ops = match style {
            NetworkStyle::Alexnet => vec![take(), Relu, Tap, AvgPool2, take(), Relu, Tap],
            NetworkStyle::Vgg => vec![take(), Relu, take(), Relu, Tap, AvgPool2, take(), Relu, take(), Relu, Tap],
            NetworkStyle::Resnet => vec![
                take(),
                Relu,
                Tap,
                ResidualStart,
                take(),
                Relu,
                take(),
                ResidualEnd,
                Relu,
                Tap,
                AvgPool2,
                take(),
                Relu,
                ResidualStart,
                take(),
                Relu,
                take(),
                ResidualEnd,
                Relu,
                Tap,
            ],
        };
        Self { style, ops }
    }

    /// He-initialized weights drawn from `seed`.
    pub fn seeded(style: NetworkStyle, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = Self::layout(style, channels)
            .into_iter()
            .enumerate()
            .map(|(i, (cin, cout, r))| {
                let k = 2 * r + 1;
                (Linear::he(&format!("conv{i}"), cin * k * k, cout, &mut rng), r)
            })
            .collect();
        Self::assemble(style, convs)
    }

    /// Loads `conv{i}.weight` (`[in·k², out]`) and `conv{i}.bias` arrays.
    pub fn load(style: NetworkStyle, channels: usize, path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!(
                "missing weights for {} at {}",
                style.name(),
                path.display()
            )));
        }
        let archive = TensorArchive::read(path)?;
        let mut net = Self::seeded(style, channels, 0);
        let mut i = 0;
        for op in &mut net.ops {
            if let Op::Conv { layer, .. } = op {
                for p in layer.params_mut() {
                    let name = p.name().to_string();
                    let t = archive.tensor(&name).ok_or_else(|| {
                        Error::Config(format!("{} weights lack `{name}`", style.name()))
                    })?;
                    if t.shape != p.shape() {
                        return Err(Error::Config(format!(
                            "{} `{name}` has shape {:?}, expected {:?}",
                            style.name(),
                            t.shape,
                            p.shape()
                        )));
                    }
                    p.value_mut().copy_from_slice(&t.data);
                }
                i += 1;
            }
        }
        debug_assert!(i > 0);
        Ok(net)
    }

    pub fn style(&self) -> NetworkStyle {
        self.style
    }

    pub(crate) fn forward(&self, x: &Mat, h: usize, w: usize) -> Taps {
        let (mut h, mut w) = (h, w);
        let mut cur = x.clone();
        let mut feats = Vec::new();
        let mut caches = Vec::with_capacity(self.ops.len());
        let mut skips = Vec::new();
        for op in &self.ops {
            match op {
                Op::Conv { layer, radius } => {
                    let nb = Neighborhood::new(h, w, *radius, Padding::Zero, None);
                    cur = layer.forward(&nb.gather(&cur));
                    caches.push(OpCache::Conv { nb });
                }
                Op::Relu => {
                    crate::nn::layers::relu(&mut cur);
                    caches.push(OpCache::Relu(cur.clone()));
                }
                Op::AvgPool2 => {
                    let pooled = h >= 2 && w >= 2;
                    caches.push(OpCache::Pool { h, w, pooled });
                    if pooled {
                        cur = avg_pool2(&cur, h, w);
                        h /= 2;
                        w /= 2;
                    }
                }
                Op::ResidualStart => {
                    skips.push(cur.clone());
                    caches.push(OpCache::None);
                }
                Op::ResidualEnd => {
                    cur.add_assign(&skips.pop().expect("balanced residual ops"));
                    caches.push(OpCache::None);
                }
                Op::Tap => {
                    feats.push(cur.clone());
                    caches.push(OpCache::None);
                }
            }
        }
        Taps { feats, caches }
    }

    /// Input gradient given gradients at each tap.
    pub(crate) fn backward(&self, taps: &Taps, tap_grads: &[Mat]) -> Mat {
        let mut tap_iter = tap_grads.iter().rev();
        let mut grad: Option<Mat> = None;
        let mut skips: Vec<Mat> = Vec::new();
        for (op, cache) in self.ops.iter().zip(&taps.caches).rev() {
            match (op, cache) {
                (Op::Tap, _) => {
                    let g = tap_iter.next().expect("one gradient per tap");
                    match &mut grad {
                        Some(acc) => acc.add_assign(g),
                        None => grad = Some(g.clone()),
                    }
                }
                (_, _) if grad.is_none() => {}
                (Op::Conv { layer, .. }, OpCache::Conv { nb }) => {
                    let g = grad.take().expect("checked");
                    grad = Some(nb.scatter(&layer.input_grad(&g)));
                }
                (Op::Relu, OpCache::Relu(y)) => {
                    crate::nn::layers::relu_backward(grad.as_mut().expect("checked"), y);
                }
                (Op::AvgPool2, OpCache::Pool { h, w, pooled }) => {
                    if *pooled {
                        grad = Some(avg_pool2_backward(grad.as_ref().expect("checked"), *h, *w));
                    }
                }
                (Op::ResidualEnd, _) => skips.push(grad.clone().expect("checked")),
                (Op::ResidualStart, _) => {
                    if let Some(s) = skips.pop() {
                        grad.as_mut().expect("checked").add_assign(&s);
                    }
                }
                _ => unreachable!("op/cache mismatch"),
            }
        }
        grad.expect("network has at least one tap")
    }
}

fn avg_pool2(x: &Mat, h: usize, w: usize) -> Mat {
    let (ho, wo, c) = (h / 2, w / 2, x.cols());
    let mut out = Mat::zeros(ho * wo, c);
    for y in 0..ho {
        for xx in 0..wo {
            let dst = out.row_mut(y * wo + xx);
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                for (o, v) in dst.iter_mut().zip(x.row((2 * y + dy) * w + 2 * xx + dx)) {
                    *o += 0.25 * v;
                }
            }
        }
    }
    out
}

fn avg_pool2_backward(dy: &Mat, h: usize, w: usize) -> Mat {
    let (ho, wo, c) = (h / 2, w / 2, dy.cols());
    let mut out = Mat::zeros(h * w, c);
    for y in 0..ho {
        for xx in 0..wo {
            let g = dy.row(y * wo + xx).to_vec();
            for (ddy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                for (o, v) in out.row_mut((2 * y + ddy) * w + 2 * xx + ddx).iter_mut().zip(&g) {
                    *o += 0.25 * v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn tap_shapes() {
        let x = Mat::from_vec(64, 3, vec![0.5; 192]);
        for (style, taps) in [(NetworkStyle::Alexnet, 2), (NetworkStyle::Vgg, 2), (NetworkStyle::Resnet, 3)] {
            let net = FrozenNet::seeded(style, 3, 1);
            let t = net.forward(&x, 8, 8);
            assert_eq!(t.feats.len(), taps);
            assert_eq!(t.feats.last().unwrap().rows(), 16);
        }
        // tiny inputs skip pooling instead of failing
        let t = FrozenNet::seeded(NetworkStyle::Vgg, 3, 1).forward(&Mat::from_vec(1, 3, vec![0.2; 3]), 1, 1);
        assert_eq!(t.feats[1].rows(), 1);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for style in [NetworkStyle::Alexnet, NetworkStyle::Vgg, NetworkStyle::Resnet] {
            let net = FrozenNet::seeded(style, 3, 2);
            let x = Mat::from_vec(36, 3, (0..108).map(|_| rng.random_range(0.0..1.0)).collect());
            let taps = net.forward(&x, 6, 6);
            let probes: Vec<Mat> = taps
                .feats
                .iter()
                .map(|f| Mat::from_vec(f.rows(), f.cols(), (0..f.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let objective = |x: &Mat| -> f64 {
                net.forward(x, 6, 6)
                    .feats
                    .iter()
                    .zip(&probes)
                    .map(|(f, p)| f.data().iter().zip(p.data()).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let g = net.backward(&taps, &probes);
            for i in (0..108).step_by(7) {
                let mut xp = x.clone();
                xp.data_mut()[i] += 1e-6;
                let mut xm = x.clone();
                xm.data_mut()[i] -= 1e-6;
                let num = (objective(&xp) - objective(&xm)) / 2e-6;
                assert!((num - g.data()[i]).abs() < 1e-5, "{style:?} {i}: {num} vs {}", g.data()[i]);
            }
        }
    }

    #[test]
    fn unknown_style_and_missing_file_are_config_errors() {
        assert!(matches!("inception".parse::<NetworkStyle>(), Err(Error::Config(_))));
        let err = FrozenNet::load(NetworkStyle::Vgg, 3, Path::new("/nonexistent/vgg.safetensors"));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
