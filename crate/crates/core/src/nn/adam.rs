use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are created by [`Adam::init`];
/// stepping before that is an error.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    initialized: bool,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, m: Vec::new(), v: Vec::new(), step: 0, initialized: false }
    }

    pub fn init(&mut self, store: &ParamStore) {
        self.m = store.params().iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        self.v = self.m.clone();
        self.step = 0;
        self.initialized = true;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if !self.initialized || self.m.len() != store.len() {
            return Err(NnError::AdamUninitialized);
        }
        for (m, p) in self.m.iter().zip(store.params()) {
            if m.shape() != p.value.shape() {
                return Err(NnError::AdamUninitialized);
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((m, v), p) in self.m.iter_mut().zip(&mut self.v).zip(store.params_mut()) {
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g[i] * g[i];
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            if !p.value.is_finite() {
                return Err(NnError::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}
