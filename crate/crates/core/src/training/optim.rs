//! AdamW with decoupled weight decay and a per-epoch cosine schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rpred_numeric::{ParameterStore, Tensor};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: ParameterStore,
    pub second: ParameterStore,
}

impl OptimizerState {
    pub fn new(params: &ParameterStore) -> Self {
        Self { step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }

    /// One update with learning rate `lr`. Parameters absent from `grads`
    /// are left untouched.
    pub fn apply(
        &mut self,
        params: &mut ParameterStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        hp: &AdamWParams,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for (name, grad) in grads {
            let (Some(p), Some(m), Some(v)) =
                (params.get_mut(name), self.first.get_mut(name), self.second.get_mut(name))
            else {
                return Err(Error::Checkpoint(format!("optimizer has no slot for parameter `{name}`")));
            };
            if p.numel() != grad.numel() || m.numel() != grad.numel() {
                return Err(Error::Checkpoint(format!("gradient shape mismatch for `{name}`")));
            }
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in grad.data().iter().enumerate() {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps) + hp.weight_decay * p[i];
                p[i] -= lr * update;
            }
        }
        Ok(())
    }
}

/// `base * (1 + cos(pi * epoch / horizon)) / 2`, held at 0 past the horizon.
pub fn cosine_lr(base: f64, epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return base;
    }
    let e = epoch.min(horizon) as f64;
    base * (1.0 + (PI * e / horizon as f64).cos()) / 2.0
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = ParameterStore::new(0);
        params.insert("w", Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(&params);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(&[1, 2], vec![0.5, -2.0]).unwrap());
        let hp = AdamWParams { weight_decay: 0.0, ..Default::default() };
        opt.apply(&mut params, &grads, 0.1, &hp).unwrap();
        let w = params.get("w").unwrap().data();
        // bias-corrected m/sqrt(v) is sign(g) on the first step, up to eps
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_without_gradient_signal() {
        let mut params = ParameterStore::new(0);
        params.insert("w", Tensor::new(&[1, 1], vec![2.0]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(&params);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(&[1, 1]).unwrap());
        opt.apply(&mut params, &grads, 0.5, &AdamWParams::default()).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], 2.0 - 0.5 * 0.01 * 2.0);
    }

    #[test]
    fn cosine_midpoint_and_ends() {
        assert_eq!(cosine_lr(5e-4, 0, 64), 5e-4);
        assert!((cosine_lr(5e-4, 32, 64) - 2.5e-4).abs() < 1e-18);
        assert!(cosine_lr(5e-4, 64, 64).abs() < 1e-18);
    }
}
