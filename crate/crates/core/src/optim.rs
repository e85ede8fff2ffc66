//! AdamW with a linear learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::params::{l2_norm, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Steps over which the rate decays linearly to zero; `0` keeps it constant.
    pub decay_steps: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            decay_steps: 0,
            max_grad_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        if self.cfg.decay_steps == 0 {
            return self.cfg.learning_rate;
        }
        let frac = 1.0 - (self.step as f64 / self.cfg.decay_steps as f64);
        self.cfg.learning_rate * frac.max(0.0)
    }

    /// Apply one update. Frozen stores are left untouched; the return value
    /// says whether the parameters were modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[f64]) -> bool {
        assert_eq!(params.len(), grads.len(), "gradient length mismatch");
        assert_eq!(
            self.m.len(),
            grads.len(),
            "optimizer built for a different store"
        );
        if params.is_frozen() {
            return false;
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let scale = if c.max_grad_norm > 0.0 {
            let n = l2_norm(grads);
            if n > c.max_grad_norm {
                c.max_grad_norm / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((p, g), m), v) in params
            .data_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g * scale;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * (mh / (vh.sqrt() + c.epsilon) + c.weight_decay * *p);
        }
        true
    }
}
