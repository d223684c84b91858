use serde::{Deserialize, Serialize};

use crate::model::{Decay, ModelConfig, ModelParams, ModelWeights, Tensors};
use crate::numerics::Matrix;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1.5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-9, weight_decay: 0.1, clip_norm: Some(1.0) }
    }
}

/// Moment estimates for a flat list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub decay: Vec<Decay>,
}

/// Global L2 norm over every gradient entry.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
}

impl OptimizerState {
    /// State for tensors with the given shapes and decay rules.
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)], decay: Vec<Decay>) -> Self {
        assert_eq!(shapes.len(), decay.len());
        let zeros: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros, decay }
    }

    /// State matching the parameter layout of `model`.
    pub fn for_model(config: AdamWConfig, model: &ModelConfig) -> Self {
        let specs = ModelWeights::layout(model).to_flat();
        let shapes: Vec<(usize, usize)> = specs.iter().map(|s| (s.rows, s.cols)).collect();
        Self::new(config, &shapes, specs.iter().map(|s| s.decay).collect())
    }

    /// Clips `grads` in place and returns the norm before clipping.
    pub fn clip(&self, grads: &mut [Matrix]) -> f64 {
        let norm = global_norm(grads);
        if let Some(max) = self.config.clip_norm {
            if norm > max {
                let s = max / (norm + 1e-12);
                grads.iter_mut().for_each(|g| g.scale_assign(s));
            }
        }
        norm
    }

    /// One AdamW update. Decay is applied first (`p ← p − lr·wd·p`), then the
    /// bias-corrected Adam step.
    pub fn apply(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), self.m.len(), "one parameter per moment");
        assert_eq!(grads.len(), self.m.len(), "one gradient per moment");
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let cols = p.cols();
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let decays = match self.decay[i] {
                    Decay::All => true,
                    Decay::None => false,
                    Decay::ExceptRow(r) => j / cols != r,
                };
                if decays {
                    *x -= c.lr * c.weight_decay * *x;
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }

    pub fn apply_to_model(&mut self, params: &mut ModelParams, grads: &[Matrix]) {
        let mut flat = params.to_flat();
        self.apply(&mut flat, grads);
        *params = params.with_flat(flat);
    }
}
