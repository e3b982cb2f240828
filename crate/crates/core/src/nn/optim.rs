//! Adam and exponential moving averages over a [`ParameterStore`].

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use crate::{Error, Result};

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

/// One bias-corrected Adam update. Fails before touching any parameter if a
/// gradient is not finite.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let slice = grads.as_slice();
    if slice.len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            slice.len(),
            store.len()
        )));
    }
    for (id, g) in store.ids().zip(slice) {
        if g.shape() != store.value(id).shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {} {:?}",
                g.shape(),
                store.name(id),
                store.value(id).shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {}",
                store.name(id)
            )));
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in slice.iter().enumerate() {
        let m = store.adam_m[i].data_mut();
        for (m, g) in m.iter_mut().zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = store.adam_v[i].data_mut();
        for (v, g) in v.iter_mut().zip(g.data()) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (store.adam_m[i].data(), store.adam_v[i].data());
        let p = store.values[i].data_mut();
        for k in 0..p.len() {
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `shadow ← decay·shadow + (1−decay)·param` for every parameter.
pub fn ema_update(store: &mut ParameterStore, decay: f64) {
    for (s, p) in store.ema.iter_mut().zip(&store.values) {
        for (s, p) in s.data_mut().iter_mut().zip(p.data()) {
            *s = decay * *s + (1.0 - decay) * p;
        }
    }
}
