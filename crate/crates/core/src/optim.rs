//! Adaptive-moment optimizer with global gradient-norm clipping, followed
//! by the leak-factor projection.

use ncam_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the concatenated gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Learning-rate schedule; constant when absent.
    #[serde(default)]
    pub decay: Option<CosineDecay>,
}

/// Half-cosine decay from `lr` to `final_fraction · lr` over `steps`
/// updates, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineDecay {
    pub steps: u64,
    pub final_fraction: f64,
}

impl AdamConfig {
    /// Learning rate of the update that follows `completed` updates.
    pub fn lr_at(&self, completed: u64) -> f64 {
        match self.decay {
            Some(d) if d.steps > 0 => {
                let progress = completed.min(d.steps) as f64 / d.steps as f64;
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                self.lr * (d.final_fraction + (1.0 - d.final_fraction) * cos)
            }
            _ => self.lr,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            decay: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `grads[i]` belongs to the i-th parameter of the
    /// store; `None` (or a frozen parameter) leaves it untouched. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f32>>]) -> Result<f64> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(NcamError::Precondition(format!(
                "optimizer tracks {} parameters, store has {}, got {} gradients",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        let norm = grads
            .iter()
            .zip(store.iter())
            .filter(|(_, p)| p.trainable)
            .filter_map(|(g, _)| g.as_ref())
            .flat_map(|g| g.iter())
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(NcamError::Diverged { step: self.t });
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let lr = self.config.lr_at(self.t);
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, param) in store.iter_mut().enumerate() {
            let Some(grad) = grads[i].as_ref().filter(|_| param.trainable) else {
                continue;
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in param.value.data_mut().iter_mut().enumerate() {
                let g = grad[j] as f64 * scale;
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * g;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        store.clamp_leak_factors();
        Ok(norm)
    }
}
