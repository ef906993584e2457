use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param shape/len");
        let grad = vec![0.0; value.len()];
        Self { name: name.into(), shape, value, grad }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn normal(name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = (0..n).map(|_| dist.sample(rng)).collect();
        Self::new(name, shape, value)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub(crate) fn scale_grad(&mut self, s: f64) {
        self.grad.iter_mut().for_each(|g| *g *= s);
    }
}
