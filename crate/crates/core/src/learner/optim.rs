use crate::autodiff::Tensor;
use crate::nets::{global_norm, ParamGroup};

/// Adam state for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(group: &ParamGroup, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: group.zeros_like(), v: group.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clips `grads` to global norm `clip` (when positive) and applies one
    /// update. Returns the norm before clipping.
    pub fn step(&mut self, group: &mut ParamGroup, grads: &[Tensor<f64>], clip: f64) -> f64 {
        let norm = global_norm(grads);
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.t += 1;
        if self.lr == 0.0 {
            return norm;
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in group.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}
