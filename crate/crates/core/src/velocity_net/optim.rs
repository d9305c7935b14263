//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Gradients, VelocityField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update over flat buffers. `step` is the 1-based index of this
/// update, used for bias correction.
///
/// ```text
/// m = b1 m + (1 - b1) g        v = b2 v + (1 - b2) g^2
/// p -= lr * (m / (1 - b1^step)) / (sqrt(v / (1 - b2^step)) + eps) + lr * wd * p
/// ```
pub fn adamw_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamWConfig) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let decay = cfg.lr * cfg.weight_decay * params[i];
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + decay;
    }
}

/// Optimizer state: first and second moments plus the update count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut VelocityField, grads: &Gradients) -> Result<()> {
        if grads.flat.len() != self.m.len() || net.num_params() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: grads.flat.len().max(net.num_params()),
            });
        }
        self.step += 1;
        adamw_update(net.params_mut(), &grads.flat, &mut self.m, &mut self.v, self.step, &self.config);
        Ok(())
    }
}
