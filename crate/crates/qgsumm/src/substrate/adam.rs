use crate::error::{QgError, Result};
use crate::substrate::params::ParamStore;
use crate::substrate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Adam optimizer state: per-parameter moment buffers plus a step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update with bias correction. Frozen parameters are skipped;
/// an unfrozen parameter without an accumulated gradient is an error.
/// All gradients are cleared afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        if store.is_frozen(&name) {
            continue;
        }
        let (rows, cols) = store.get(&name).shape();
        let grad = {
            let p = store
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, p)| p)
                .unwrap();
            match &p.grad {
                Some(g) => g.clone(),
                None => {
                    return Err(QgError::Validation(format!(
                        "missing gradient on unfrozen parameter {name}"
                    )))
                }
            }
        };
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(rows, cols));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(rows, cols));
        let value = store.get_mut(&name);
        for i in 0..value.len() {
            let g = grad.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            value.data_mut()[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        if let Some((idx, bad)) = value.first_non_finite() {
            return Err(QgError::NonFinite { op: "adam_step", index: idx, value: bad });
        }
    }
    store.clear_grads();
    Ok(())
}
