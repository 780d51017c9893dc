//! Adam with decoupled weight decay.

use super::{GnnError, ModelParams};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .tensors()
            .iter()
            .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: zeros.clone(),
            m: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<(), GnnError> {
        if !grads.is_finite() {
            return Err(GnnError::Numeric("gradients; optimizer step skipped".into()));
        }
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || grads.len() != self.m.len() {
            return Err(GnnError::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in tensors.iter_mut().enumerate() {
            let g = grads[i].values();
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            for (j, x) in p.values_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *x -= self.lr * (update + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}
