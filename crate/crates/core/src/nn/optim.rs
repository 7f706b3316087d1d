//! SGD with momentum and a per-task cosine learning-rate schedule.

use ndarray::ArrayD;

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Momentum SGD. Velocity buffers align positionally with the parameter
/// list handed to `step`, so a given optimizer instance must always see
/// the same parameter collection order.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocities: Vec<ArrayD<f32>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd {
            cfg,
            velocities: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f32) -> Result<()> {
        if self.velocities.is_empty() {
            self.velocities = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        if self.velocities.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer saw {} parameters, expected {}",
                params.len(),
                self.velocities.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(self.velocities.iter_mut()) {
            let wd = self.cfg.weight_decay;
            let m = self.cfg.momentum;
            ndarray::Zip::from(&mut p.value)
                .and(v)
                .and(&p.grad)
                .for_each(|w, vel, &g| {
                    let eff = g + wd * *w;
                    *vel = m * *vel + eff;
                    *w -= lr * *vel;
                });
        }
        Ok(())
    }

    /// Velocity tensors for checkpointing, in parameter order.
    pub fn velocities(&self) -> &[ArrayD<f32>] {
        &self.velocities
    }

    pub fn set_velocities(&mut self, v: Vec<ArrayD<f32>>) {
        self.velocities = v;
    }
}

/// Cosine-annealed learning rate over a task's step budget, decaying from
/// `base_lr` to zero. `step` counts from 0.
pub fn cosine_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = (step as f64 / total_steps as f64).min(1.0);
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos())
}
