use crate::error::{QgError, Result};
use crate::substrate::graph::{Graph, Var};
use crate::substrate::rng::Fnv64;
use crate::substrate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A named parameter: value, optional accumulated gradient, freeze flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    pub frozen: bool,
}

/// Named parameter collection. BTreeMap keeps every iteration order
/// deterministic, which the optimizer and checkpoint format rely on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.params.insert(
            name.to_string(),
            Param { value, grad: None, frozen: false },
        );
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.params[name].frozen
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) {
        self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).frozen =
            frozen;
    }

    /// Freeze or unfreeze every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    pub fn set_frozen_all(&mut self, frozen: bool) {
        for p in self.params.values_mut() {
            p.frozen = frozen;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Add `scale * grad` into the accumulated gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor, scale: f64) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| QgError::Validation(format!("unknown parameter {name}")))?;
        if grad.shape() != p.value.shape() {
            return Err(QgError::shape(
                "accumulate_grad",
                format!("{name}: grad {:?} vs value {:?}", grad.shape(), p.value.shape()),
            ));
        }
        match &mut p.grad {
            Some(acc) => acc.add_scaled_assign(grad, scale),
            slot => {
                let mut t = Tensor::zeros(grad.rows(), grad.cols());
                t.add_scaled_assign(grad, scale);
                *slot = Some(t);
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Stable digest of all parameters whose name starts with `prefix`
    /// (empty prefix = whole store). Used by freeze-contract checks.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = Fnv64::new();
        for (name, p) in &self.params {
            if name.starts_with(prefix) {
                h.write_str(name);
                h.write_u64(p.value.checksum());
            }
        }
        h.finish()
    }
}

/// Bind a stored parameter into a graph as a (memoized) named leaf.
/// Frozen parameters enter as constants: gradients flow through them but are
/// not collected for them.
pub fn bind(g: &mut Graph, store: &ParamStore, name: &str) -> Var {
    let frozen = store.is_frozen(name);
    g.named_leaf(name, store.get(name), !frozen)
}

/// Accumulate all named-leaf gradients from a finished backward pass into the
/// store, scaled by `scale`. Names missing from the store are an error.
pub fn harvest(g: &Graph, store: &mut ParamStore, scale: f64) -> Result<()> {
    for (name, grad) in g.named_grads() {
        store.accumulate_grad(&name, grad, scale)?;
    }
    Ok(())
}
