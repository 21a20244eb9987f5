use super::scalar::Scalar;
use super::tensor::Tensor;

/// Adam hyperparameters. Defaults are the GAN settings: lr 2e-4, betas (0.5, 0.999).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Bias-corrected Adam update of every parameter that holds a gradient.
    pub fn step(&mut self, params: &[Tensor<T>]) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter list changed");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / correction1);
        let inv_sqrt_c2 = T::of(1.0 / correction2.sqrt());
        let eps = T::of(eps);

        for ((p, m), v) in params
            .iter()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grad = p.grad_ref();
            let Some(g) = grad.as_ref() else { continue };
            let mut data = p.data_mut();
            for (((x, &gi), mi), vi) in data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *x = *x - step_size * *mi / (vi.sqrt() * inv_sqrt_c2 + eps);
            }
        }
    }
}

pub fn zero_grads<T: Scalar>(params: &[Tensor<T>]) {
    for p in params {
        p.zero_grad();
    }
}

pub fn set_trainable<T: Scalar>(params: &[Tensor<T>], flag: bool) {
    for p in params {
        p.set_requires_grad(flag);
    }
}
