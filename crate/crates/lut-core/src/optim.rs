//! Adam with bias correction, global-norm gradient clipping, and the
//! warmup-then-stair-decay learning-rate schedule.

use crate::error::{LutError, Result};
use crate::params::ParamStore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        // desk-scale shrink of the reference settings
        Schedule { peak_lr: 4e-4, warmup_steps: 500, decay_rate: 0.5, decay_steps: 1000 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.peak_lr <= 0.0
            || self.warmup_steps == 0
            || self.decay_steps == 0
            || self.decay_rate <= 0.0
            || self.decay_rate > 1.0
        {
            return Err(LutError::Config(format!("bad schedule {self:?}")));
        }
        Ok(())
    }

    /// Linear warmup to `peak_lr`, then multiply by `decay_rate` every
    /// `decay_steps`. Continuous at the warmup boundary, positive everywhere,
    /// non-increasing afterwards.
    pub fn lr_at(&self, step: u64) -> f64 {
        assert!(step >= 1, "steps are 1-based");
        if step <= self.warmup_steps {
            self.peak_lr * step as f64 / self.warmup_steps as f64
        } else {
            let stairs = (step - self.warmup_steps) / self.decay_steps;
            self.peak_lr * self.decay_rate.powi(stairs as i32)
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state. Each parameter keeps its own step counter so parameters that
/// sit out some updates (absent from the graph that step) still get exact
/// bias correction when they return.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hp: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore, hp: AdamParams) -> Self {
        let m = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        let t = vec![0; m.len()];
        Adam { hp, m, v, t }
    }

    /// Apply one update. `grads[i]` holds the gradient for parameter `i`, or
    /// `None` when that parameter did not participate this step (it is left
    /// untouched, moments included).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f64>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(LutError::shape(
                "adam_step",
                format!("{} grads for {} params", grads.len(), self.m.len()),
            ));
        }
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let id = crate::params::ParamId(i);
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(LutError::NonFinite(format!(
                    "gradient of {} at update {}",
                    store.name(id),
                    self.t[i] + 1
                )));
            }
            if grad.len() != self.m[i].len() {
                return Err(LutError::shape(
                    "adam_step",
                    format!("gradient of {} has {} values, param has {}", store.name(id), grad.len(), self.m[i].len()),
                ));
            }
            self.t[i] += 1;
            let t = self.t[i];
            let b1 = self.hp.beta1;
            let b2 = self.hp.beta2;
            let corr1 = 1.0 - b1.powi(t as i32);
            let corr2 = 1.0 - b2.powi(t as i32);
            let data = store.get_mut(id).data_mut();
            for (j, &gj) in grad.iter().enumerate() {
                let m = &mut self.m[i][j];
                *m = b1 * *m + (1.0 - b1) * gj;
                let v = &mut self.v[i][j];
                *v = b2 * *v + (1.0 - b2) * gj * gj;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + self.hp.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients down so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= k;
            }
        }
    }
    norm
}
