//! AdamW with linear warmup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            grad_clip: 1.0,
        }
    }
}

impl AdamWConfig {
    /// Rate for 1-based update `step`: `lr · step / warmup` during warmup,
    /// `lr` afterwards.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moments, one buffer per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .entries()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(e, (m, v))| m.len() == e.tensor.numel() && v.len() == e.tensor.numel())
    }
}

/// One AdamW update from the gradients currently held by `store`, then
/// clears them. Frozen parameters are skipped; a missing gradient counts as
/// zero. Weight decay applies to matrices only (not gains or biases).
/// Returns the learning rate used.
pub fn adamw_update(store: &mut ParamStore, state: &mut AdamState, cfg: &AdamWConfig) -> Result<f64> {
    if !state.matches(store) {
        return Err(Error::Shape("optimizer state does not mirror the parameters".into()));
    }
    let next = state.step + 1;
    let ids: Vec<_> = store.ids().collect();
    let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(ids.len());
    let mut sq_norm = 0.0;
    for &id in &ids {
        let e = store.entry(id);
        if e.frozen {
            grads.push(None);
            continue;
        }
        let g = e.tensor.grad().unwrap_or_else(|| vec![0.0; e.tensor.numel()]);
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} at {}[{i}] on update {next}",
                g[i], e.name
            )));
        }
        sq_norm += g.iter().map(|x| x * x).sum::<f64>();
        grads.push(Some(g));
    }
    let clip = if cfg.grad_clip > 0.0 && sq_norm.sqrt() > cfg.grad_clip {
        cfg.grad_clip / sq_norm.sqrt()
    } else {
        1.0
    };
    state.step = next;
    let lr = cfg.lr_at(next);
    let bc1 = 1.0 - cfg.beta1.powi(next as i32);
    let bc2 = 1.0 - cfg.beta2.powi(next as i32);
    for (k, &id) in ids.iter().enumerate() {
        let Some(g) = &grads[k] else { continue };
        let e = store.entry(id);
        let decay = if e.tensor.rank() >= 2 { cfg.weight_decay } else { 0.0 };
        let mut w = e.tensor.to_vec();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..w.len() {
            let gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + decay * w[i]);
        }
        store.set_data(id, w)?;
    }
    Ok(lr)
}
