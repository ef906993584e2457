//! Dense layers, layer normalization and pointwise activations with explicit
//! backward passes.

use rand::Rng;

use super::mat::Mat;
use super::param::Param;

/// `y = x·W + b` with `W` stored `in×out`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    /// Weights drawn from `N(0, std²)`, bias zero.
    pub fn new(name: &str, input: usize, output: usize, bias: bool, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::normal(format!("{name}.weight"), vec![input, output], std, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), vec![output])),
        }
    }

    /// LeCun-normal initialization, `std = 1/√in`.
    pub fn lecun(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::new(name, input, output, true, (1.0 / input as f64).sqrt(), rng)
    }

    /// He-normal initialization, `std = √(2/in)`.
    pub fn he(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::new(name, input, output, true, (2.0 / input as f64).sqrt(), rng)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn weight_mat(&self) -> Mat {
        Mat::from_vec(self.input_dim(), self.output_dim(), self.weight.value().to_vec())
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        assert_eq!(x.cols(), self.input_dim(), "linear input width");
        let mut y = Mat::zeros(x.rows(), self.output_dim());
        let w = super::mat::View::new(self.weight.value(), 0, self.input_dim(), self.output_dim(), self.output_dim(), 1);
        super::mat::gemm(1.0, x.view(), w, 0.0, y.data_mut(), 0, self.output_dim());
        if let Some(b) = &self.bias {
            for i in 0..y.rows() {
                for (v, bb) in y.row_mut(i).iter_mut().zip(b.value()) {
                    *v += bb;
                }
            }
        }
        y
    }

    /// `dx = dy·Wᵀ`
    pub fn input_grad(&self, dy: &Mat) -> Mat {
        dy.matmul_t(&self.weight_mat())
    }

    /// Accumulates `dW += xᵀ·dy` and `db += Σ dy`.
    pub fn accumulate(&mut self, x: &Mat, dy: &Mat) {
        let (i, o) = (self.input_dim(), self.output_dim());
        let dw = self.weight.grad_mut();
        super::mat::gemm(1.0, x.view().t(), dy.view(), 1.0, dw, 0, o);
        debug_assert_eq!(dw.len(), i * o);
        if let Some(b) = &mut self.bias {
            for (g, s) in b.grad_mut().iter_mut().zip(dy.col_sums()) {
                *g += s;
            }
        }
    }

    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        self.accumulate(x, dy);
        self.input_grad(dy)
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

pub(crate) fn relu(x: &mut Mat) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` where the ReLU output `y` was zero.
pub(crate) fn relu_backward(dy: &mut Mat, y: &Mat) {
    for (d, v) in dy.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: &Mat) -> Mat {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
        .collect();
    Mat::from_vec(x.rows(), x.cols(), data)
}

pub(crate) fn gelu_backward(dy: &Mat, x: &Mat) -> Mat {
    let data = dy
        .data()
        .iter()
        .zip(x.data())
        .map(|(&d, &v)| {
            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
            d * (0.5 * (1.0 + t) + 0.5 * v * dt)
        })
        .collect();
    Mat::from_vec(dy.rows(), dy.cols(), data)
}

/// Per-row layer normalization with learnable scale and shift.
#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f64,
}

pub(crate) struct LayerNormCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![dim], vec![1.0; dim]),
            beta: Param::zeros(format!("{name}.beta"), vec![dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols();
        let mut xhat = Mat::zeros(x.rows(), d);
        let mut y = Mat::zeros(x.rows(), d);
        let mut rstd = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + self.eps).sqrt();
            rstd.push(r);
            let xh = xhat.row_mut(i);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * r;
            }
            let xh = xhat.row(i).to_vec();
            for (k, o) in y.row_mut(i).iter_mut().enumerate() {
                *o = xh[k] * self.gamma.value()[k] + self.beta.value()[k];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Mat {
        let d = dy.cols();
        let mut dx = Mat::zeros(dy.rows(), d);
        let gamma = self.gamma.value().to_vec();
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for i in 0..dy.rows() {
            let g = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for k in 0..d {
                dgamma[k] += g[k] * xh[k];
                dbeta[k] += g[k];
                let dxh = g[k] * gamma[k];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[k];
            }
            let r = cache.rstd[i] / d as f64;
            for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
                let dxh = g[k] * gamma[k];
                *o = r * (d as f64 * dxh - sum_dxh - xh[k] * sum_dxh_xh);
            }
        }
        for (a, b) in self.gamma.grad_mut().iter_mut().zip(dgamma) {
            *a += b;
        }
        for (a, b) in self.beta.grad_mut().iter_mut().zip(dbeta) {
            *a += b;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    // Scalar objective `Σ y ⊙ probe` so that dy = probe.
    fn check_input_grad(f: impl Fn(&Mat) -> Mat, x: &Mat, probe: &Mat, analytic: &Mat) {
        let h = 1e-6;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp: f64 = f(&xp).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            let fm: f64 = f(&xm).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            let num = (fp - fm) / (2.0 * h);
            assert!((num - analytic.data()[i]).abs() < 1e-6, "grad {i}: {num} vs {}", analytic.data()[i]);
        }
    }

    #[test]
    fn layer_norm_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ln = LayerNorm::new("ln", 5);
        ln.gamma.value_mut().iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        let x = random_mat(3, 5, &mut rng);
        let probe = random_mat(3, 5, &mut rng);
        let (_, cache) = ln.forward(&x);
        let dx = ln.clone().backward(&cache, &probe);
        check_input_grad(|x| ln.forward(x).0, &x, &probe, &dx);
    }

    #[test]
    fn gelu_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_mat(2, 6, &mut rng);
        let probe = random_mat(2, 6, &mut rng);
        check_input_grad(gelu, &x, &probe, &gelu_backward(&probe, &x));
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Linear::lecun("l", 4, 3, &mut rng);
        let x = random_mat(6, 4, &mut rng);
        let probe = random_mat(6, 3, &mut rng);
        let dx = lin.backward(&x, &probe);
        check_input_grad(|x| lin.forward(x), &x, &probe, &dx);
        let expect_db = probe.col_sums();
        assert_eq!(lin.bias.as_ref().unwrap().grad(), expect_db.as_slice());
    }
}
