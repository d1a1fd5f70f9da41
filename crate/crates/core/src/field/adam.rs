use serde::{Deserialize, Serialize};

use super::GradScratch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier applied once per `decay_interval` steps after decay starts.
    pub decay: f64,
    /// Fraction of the total steps after which the decay starts.
    pub decay_start: f64,
    pub decay_interval: u32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 9e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            decay: 0.92,
            decay_start: 0.7,
            decay_interval: 25,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && (0.0..=1.0).contains(&self.decay_start)
            && self.decay_interval > 0;
        if !ok {
            return Err(Error::config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }

    /// `lr * decay^floor(max(0, step - decay_start * total) / interval)`.
    pub fn learning_rate_at(&self, step: u64, total_steps: u64) -> f64 {
        let past = (step as f64 - self.decay_start * total_steps as f64).max(0.0);
        let k = (past / self.decay_interval as f64).floor();
        self.learning_rate * self.decay.powi(k as i32)
    }
}

/// Moments and step counter, one entry per field parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub total_steps: u64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub(crate) scratch: GradScratch,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize, total_steps: u64) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            total_steps: total_steps.max(1),
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            scratch: GradScratch::default(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.step, self.total_steps)
    }

    /// Applies one update to the listed parameters and advances the step.
    pub(crate) fn update(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        indices: impl Iterator<Item = usize>,
    ) {
        let c = self.config;
        let lr = self.learning_rate();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in indices {
            let g = grad[i];
            let m = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            let v = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
        }
        self.step += 1;
    }
}
