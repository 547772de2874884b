//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam state: per-parameter first/second moment accumulators and the step
/// counter. Parameter order is fixed at construction and must match every
/// `step` call.
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(param_shapes: &[Vec<usize>], lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Conventional moment decay rates (0.9, 0.999) and eps 1e-8.
    pub fn with_defaults(param_shapes: &[Vec<usize>], lr: T) -> Self {
        Self::new(
            param_shapes,
            lr,
            T::of(0.9),
            T::of(0.999),
            T::of(1e-8),
        )
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over all parameters.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam-step",
                lhs: vec![params.len(), grads.len()],
                rhs: vec![self.m.len()],
            });
        }
        for i in 0..params.len() {
            if params[i].shape() != self.m[i].shape() || grads[i].shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam-step",
                    lhs: params[i].shape().to_vec(),
                    rhs: grads[i].shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let corr1 = T::one() - self.beta1.powi(self.step as i32);
        let corr2 = T::one() - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (T::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (T::one() - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
