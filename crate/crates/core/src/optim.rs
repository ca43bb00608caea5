//! AdamW over a flat parameter vector and the cosine learning-rate curve.
//!
//! Weight decay is decoupled but scaled by the learning rate, so a zero
//! learning rate leaves parameters untouched.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update in place. Bias correction uses the step counter, which
    /// increments exactly once per call.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::LengthMismatch { left: params.len(), right: self.m.len() });
        }
        if grads.len() != params.len() {
            return Err(Error::LengthMismatch { left: grads.len(), right: params.len() });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }
}

/// Closed-form cosine annealing:
/// `eta_min + (eta_max - eta_min) * (1 + cos(pi * t / t_max)) / 2`.
pub fn cosine_lr(t: usize, t_max: usize, eta_min: f64, eta_max: f64) -> f64 {
    let phase = std::f64::consts::PI * t as f64 / t_max.max(1) as f64;
    eta_min + (eta_max - eta_min) * (1.0 + phase.cos()) / 2.0
}
