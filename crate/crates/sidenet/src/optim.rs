//! AdamW with decoupled weight decay and bias correction.

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moment1: Vec<Vec<f64>>,
    moment2: Vec<Vec<f64>>,
}

impl AdamW {
    /// Defaults: lr 1e-4, betas (0.9, 0.999), eps 1e-8, weight decay 0.01.
    pub fn new(set: &ParamSet, lr: f64) -> Self {
        AdamW::with_weight_decay(set, lr, 0.01)
    }

    pub fn with_weight_decay(set: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let moment1 = set.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let moment2 = set.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moment1,
            moment2,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter, followed by grad zeroing.
    /// A NaN or Inf gradient halts training with the parameter's name.
    pub fn step(&mut self, set: &mut ParamSet) -> Result<()> {
        for p in set.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::NonFiniteGrad(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in set.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = &mut self.moment1[idx];
            let v = &mut self.moment2[idx];
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                w[j] -= self.lr * self.weight_decay * w[j];
            }
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}
