use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::{shape_err, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Moment buffers as named tensors, for checkpointing.
    pub fn to_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (i, (name, t)) in store.iter().enumerate() {
            let shape = t.shape().to_vec();
            out.push((
                format!("adam.m.{name}"),
                Tensor::new(shape.clone(), self.m[i].clone()).unwrap(),
            ));
            out.push((format!("adam.v.{name}"), Tensor::new(shape, self.v[i].clone()).unwrap()));
        }
        out
    }

    /// Rebuilds state from [`AdamState::to_tensors`] output.
    pub fn from_tensors(
        store: &ParamStore,
        config: AdamConfig,
        step: u64,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<Self, TensorError> {
        let mut state = Self::new(store, config);
        state.step = step;
        for (i, (name, t)) in store.iter().enumerate() {
            for (buf, kind) in [(&mut state.m[i], "m"), (&mut state.v[i], "v")] {
                let key = format!("adam.{kind}.{name}");
                let saved = lookup(&key).ok_or(TensorError::UnknownParam(key))?;
                if saved.shape() != t.shape() {
                    return Err(shape_err("adam restore", t.shape(), saved.shape()));
                }
                *buf = saved.into_data();
            }
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Parameters without
/// a gradient are left untouched, moments included.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<(), TensorError> {
    if state.m.len() != store.len() {
        return Err(shape_err("adam_step", &[state.m.len()], &[store.len()]));
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for id in store.ids().collect::<Vec<_>>() {
        let Some(g) = grads.get(id) else {
            continue;
        };
        let param = store.get_mut(id);
        if g.len() != param.numel() {
            return Err(shape_err("adam_step", param.shape(), &[g.len()]));
        }
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for (k, w) in param.data_mut().iter_mut().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `base_lr` over `warmup` steps, then linear decay to
/// `lr_final` at `total` steps, constant afterwards.
pub fn warmup_linear_decay(step: u64, base_lr: f64, warmup: u64, total: u64, lr_final: f64) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if step >= total || total <= warmup {
        return if step >= total { lr_final } else { base_lr };
    }
    let frac = (step - warmup) as f64 / (total - warmup) as f64;
    base_lr + (lr_final - base_lr) * frac
}
