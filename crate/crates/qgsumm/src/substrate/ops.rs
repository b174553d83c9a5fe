//! Composite graph operations shared by the model and responder stacks.

use crate::error::{QgError, Result};
use crate::substrate::graph::{Graph, Var};
use crate::substrate::tensor::Tensor;

/// Clamp applied to predicted probabilities inside the cross-entropy log.
pub const CE_EPS: f64 = 1e-12;

/// Additive mask value for disallowed attention positions. Finite by design
/// so the non-finite guard on op outputs stays meaningful.
pub const MASK_NEG: f64 = -1e30;

fn check_distribution(op: &'static str, which: &str, t: &Tensor) -> Result<()> {
    let mut sum = 0.0;
    for v in t.iter() {
        if *v < 0.0 {
            return Err(QgError::Validation(format!(
                "{op}: {which} has negative component {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(QgError::Validation(format!(
            "{op}: {which} sums to {sum}, expected 1 within 1e-6"
        )));
    }
    Ok(())
}

/// Soft-label cross-entropy −Σ target_k · ln(max(pred_k, ε)).
/// Both inputs must be row-vector distributions of equal length; the target
/// is typically a detached constant.
pub fn cross_entropy_soft(g: &mut Graph, target: Var, pred: Var) -> Result<Var> {
    let ts = g.value(target).shape();
    let ps = g.value(pred).shape();
    if ts != ps {
        return Err(QgError::shape(
            "cross_entropy_soft",
            format!("target {ts:?} vs pred {ps:?}"),
        ));
    }
    if ts.0 != 1 {
        return Err(QgError::shape(
            "cross_entropy_soft",
            format!("expected row distributions, got {ts:?}"),
        ));
    }
    check_distribution("cross_entropy_soft", "target", g.value(target))?;
    check_distribution("cross_entropy_soft", "pred", g.value(pred))?;
    let clamped = g.clamp_min(pred, CE_EPS)?;
    let logp = g.log(clamped)?;
    let weighted = g.mul(target, logp)?;
    let total = g.sum_all(weighted)?;
    g.scale(total, -1.0)
}

/// Causal mask for decoder self-attention over `n` positions: position i may
/// attend to j ≤ i.
pub fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            m.set(i, j, MASK_NEG);
        }
    }
    m
}

/// Masked, scaled attention weights: softmax(q·kᵀ·scale + mask).
pub fn attention_weights(
    g: &mut Graph,
    q: Var,
    k: Var,
    scale: f64,
    mask: Option<Var>,
) -> Result<Var> {
    let scores = g.matmul_transb(q, k)?;
    let scaled = g.scale(scores, scale)?;
    let masked = match mask {
        Some(m) => g.add(scaled, m)?,
        None => scaled,
    };
    g.softmax_rows(masked)
}

/// Renormalize a non-negative row vector to sum to 1 (differentiably).
pub fn normalize_row(g: &mut Graph, v: Var) -> Result<Var> {
    let total = g.sum_all(v)?;
    let clamped = g.clamp_min(total, CE_EPS)?;
    let cols = g.value(v).cols();
    let mut broadcast = Vec::with_capacity(cols);
    broadcast.resize(cols, clamped);
    let denom = g.concat_cols(&broadcast)?;
    g.div(v, denom)
}

/// Cosine similarity between two row vectors, as a scalar node.
pub fn cosine_similarity(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let dot_parts = g.mul(a, b)?;
    let dot = g.sum_all(dot_parts)?;
    let aa = g.mul(a, a)?;
    let na2 = g.sum_all(aa)?;
    let bb = g.mul(b, b)?;
    let nb2 = g.sum_all(bb)?;
    let prod = g.mul(na2, nb2)?;
    let clamped = g.clamp_min(prod, 1e-24)?;
    let denom = g.sqrt(clamped)?;
    g.div(dot, denom)
}
