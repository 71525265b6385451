use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::params::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Parameters whose gradient is absent are skipped
/// entirely (no moment decay, no step count).
#[derive(Clone, Copy, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config }
    }

    /// Applies one update at learning rate `lr`.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        for (id, g) in grads.present() {
            if id.index() >= store.len() {
                return Err(NumericsError::invalid("adam_step", "gradient for unknown parameter"));
            }
            let p = store.get(id);
            if p.value.len() != g.len() {
                return Err(NumericsError::shape("adam_step", p.value.shape(), &[g.len()]));
            }
        }
        for (id, g) in grads.present() {
            let p = store.get_mut(id);
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let values = p.value.data_mut();
            for i in 0..g.len() {
                p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g[i];
                p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = p.adam_m[i] / bc1;
                let v_hat = p.adam_v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `lr(e) = base · gamma^⌊e / step_size⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_size: u32,
    pub gamma: f64,
}

impl Default for StepLr {
    fn default() -> Self {
        StepLr {
            base_lr: 3e-4,
            step_size: 3,
            gamma: 0.5,
        }
    }
}

impl StepLr {
    pub fn lr(&self, epoch: i64) -> Result<f64> {
        if epoch < 0 {
            return Err(NumericsError::invalid("steplr", format!("negative epoch {epoch}")));
        }
        if self.step_size == 0 {
            return Err(NumericsError::invalid("steplr", "step_size must be positive"));
        }
        let decays = (epoch / self.step_size as i64) as i32;
        Ok(self.base_lr * self.gamma.powi(decays))
    }
}
