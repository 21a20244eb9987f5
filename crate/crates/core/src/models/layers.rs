use rand::Rng;

use crate::autograd::{conv2d, conv_transpose2d, instance_norm, AutogradError, PadMode, Scalar, Tensor, INSTANCE_NORM_EPS};

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Ordered, named parameter list of a network.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Scalar> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, name: String, t: &Tensor<T>) {
        self.names.push(name);
        self.tensors.push(t.clone());
    }

    pub fn extend(&mut self, prefix: &str, other: ParamSet<T>) {
        for (n, t) in other.names.into_iter().zip(other.tensors) {
            self.names.push(format!("{prefix}{n}"));
            self.tensors.push(t);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

/// Weights `O×C×k×k` (or `Cin×Cout×k×k` when transposed) and a bias vector.
#[derive(Debug, Clone)]
pub struct Conv<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub transposed: bool,
}

impl<T: Scalar> Conv<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Tensor::randn(&[c_out, c_in, k, k], 0.0, INIT_STD, rng);
        weight.set_requires_grad(true);
        let bias = Tensor::zeros(&[c_out]);
        bias.set_requires_grad(true);
        Self { weight, bias, stride, pad, mode, transposed: false }
    }

    pub fn transposed(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let weight = Tensor::randn(&[c_in, c_out, k, k], 0.0, INIT_STD, rng);
        weight.set_requires_grad(true);
        let bias = Tensor::zeros(&[c_out]);
        bias.set_requires_grad(true);
        Self { weight, bias, stride, pad, mode: PadMode::Zero, transposed: true }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        if self.transposed {
            conv_transpose2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
        } else {
            conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad, self.mode)
        }
    }

    pub fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        p.push("weight".into(), &self.weight);
        p.push("bias".into(), &self.bias);
        p
    }
}

pub fn norm<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
    instance_norm(x, None, None, INSTANCE_NORM_EPS)
}

pub fn lrelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(T::of(LEAKY_SLOPE))
}
