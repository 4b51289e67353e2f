//! Adam with linear warmup.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from `lr / warmup` to `lr`.
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.98, eps: 1e-9, warmup_steps: 200 }
    }
}

impl AdamConfig {
    /// Learning rate applied at 1-based step `t`.
    pub fn rate_at(&self, t: u64) -> f64 {
        if self.warmup_steps > 0 && t < self.warmup_steps {
            self.learning_rate * t as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }
}

/// Adam state. Moments are tracked per parameter tensor; groups passed as
/// frozen to [`Adam::step`] are left untouched, moments included.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates each tensor has received (for bias correction).
    pub t: Vec<u64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|e| Tensor::zeros(e.value.rows, e.value.cols)).collect();
        Self { config, m: zeros.clone(), v: zeros, t: alloc::vec![0; params.len()], steps: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, frozen: &[ParamGroup]) {
        self.steps += 1;
        let lr = self.config.rate_at(self.steps);
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if frozen.contains(&params.entry(id).group) {
                continue;
            }
            let i = id.0;
            self.t[i] += 1;
            let c1 = 1.0 - libm::pow(b1, self.t[i] as f64);
            let c2 = 1.0 - libm::pow(b2, self.t[i] as f64);
            let g = &grads.get(id).data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            let p = &mut params.get_mut(id).data;
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
    }
}
