use serde::{Deserialize, Serialize};

use super::param::Param;

/// Moment coefficients for [`Adam`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer with bias correction.
///
/// Parameters must be passed in the same order on every call.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self { lr, cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad().to_vec();
            for (((w, g), mi), vi) in p.value_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("x", vec![2], vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1, AdamConfig::default());
        for _ in 0..500 {
            p.zero_grad();
            let g: Vec<f64> = p.value().iter().map(|x| 2.0 * (x - 1.0)).collect();
            p.grad_mut().copy_from_slice(&g);
            opt.step(vec![&mut p]);
        }
        for v in p.value() {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new("x", vec![1], vec![0.0]);
        p.grad_mut()[0] = 5.0;
        Adam::new(0.01, AdamConfig::default()).step(vec![&mut p]);
        assert!((p.value()[0] + 0.01).abs() < 1e-9);
    }
}
