use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam step on flat slices; `t` is the 1-based step count.
pub fn adam_update<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(NnError::ShapeMismatch(format!(
            "adam over {n} params with {} grads, {} / {} moments",
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    let t = t.max(1) as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for i in 0..n {
        let g = grads[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let mh = m[i] * c1;
        let vh = v[i] * c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Moment buffers for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(&p.value.shape)).collect();
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// Applies the gradients held in the store's grad buffers.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!("optimizer state for {} params, store has {}", self.m.len(), store.len())));
        }
        self.t += 1;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            adam_update(&mut p.value.data, &p.grad.data, &mut m.data, &mut v.data, self.t, &self.config)?;
        }
        Ok(())
    }
}
