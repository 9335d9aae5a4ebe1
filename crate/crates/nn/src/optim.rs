//! Adam with decoupled weight decay.

use crate::param::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// One bias-corrected update from the `grad` buffers. Frozen tensors are
    /// skipped. Gradients are left in place.
    pub fn step(&mut self, params: &mut ParamSet) {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params.tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.values[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p.values[i]);
            }
        }
    }
}
