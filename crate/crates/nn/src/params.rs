//! Named parameters, running-statistics buffers and the AdamW optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// First and second AdamW moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Parameters and buffers keyed by module path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
    buffer_index: BTreeMap<String, usize>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Seed of every random stream derived from this store.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling applied before the moment update.
    pub clip_norm: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, clip_norm: 1.0 }
    }
}

/// Running mean/variance produced by one training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            index: BTreeMap::new(),
            buffer_index: BTreeMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) || self.buffer_index.contains_key(name) {
            return Err(NnError::Duplicate(name.to_string()));
        }
        let n = value.len();
        self.params.push(Param { name: name.to_string(), value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] });
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) || self.buffer_index.contains_key(name) {
            return Err(NnError::Duplicate(name.to_string()));
        }
        self.buffers.push((name.to_string(), value));
        self.buffer_index.insert(name.to_string(), self.buffers.len() - 1);
        Ok(self.buffers.len() - 1)
    }

    /// Weight `[fan_in, fan_out]` drawn uniformly in ±√(6/fan_in) and a zero
    /// bias, registered as `{prefix}.w` and `{prefix}.b`.
    pub fn add_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.add_param(&format!("{prefix}.w"), Tensor::new(&[fan_in, fan_out], w)?)?;
        self.add_param(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(())
    }

    /// Scale/shift parameters and running statistics of a batch norm.
    pub fn add_batchnorm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.add_param(&format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0))?;
        self.add_param(&format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
        self.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?;
        self.add_buffer(&format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0))?;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| NnError::Unknown(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        Ok(&self.params[self.param_index(name)?])
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        let i = self.param_index(name)?;
        Ok(&mut self.params[i])
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        let i = self.buffer_index.get(name).ok_or_else(|| NnError::Unknown(name.to_string()))?;
        Ok(&self.buffers[*i].1)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self.buffer_index.get(name).ok_or_else(|| NnError::Unknown(name.to_string()))?;
        Ok(&mut self.buffers[i].1)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads[i]` (aligned with [`Self::params`]) into the accumulators.
    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>]) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            let mean = self.buffer_mut(&format!("{}.running_mean", u.prefix))?;
            for (r, b) in mean.data_mut().iter_mut().zip(&u.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            let var = self.buffer_mut(&format!("{}.running_var", u.prefix))?;
            for (r, b) in var.data_mut().iter_mut().zip(&u.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| &p.grad).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// One AdamW step on the accumulated gradients: clip to the global norm,
    /// update bias-corrected moments, then apply decoupled weight decay.
    pub fn adamw_step(&mut self, opt: &AdamW, lr: f64) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFiniteGradient { param: p.name.clone() });
        }
        let norm = self.grad_norm();
        let scale = if norm > opt.clip_norm { opt.clip_norm / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for p in &mut self.params {
            let value = p.value.data_mut();
            #[allow(clippy::needless_range_loop)]
            for i in 0..value.len() {
                let g = p.grad[i] * scale;
                p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
                p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                value[i] -= lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * value[i]);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
