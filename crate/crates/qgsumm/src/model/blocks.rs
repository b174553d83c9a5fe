//! Shared transformer building blocks (used by both the seq2seq model and
//! the query responder).

use crate::error::Result;
use crate::substrate::graph::{Graph, Var};
use crate::substrate::ops;
use crate::substrate::params::{bind, ParamStore};
use crate::substrate::rng::stream;
use crate::substrate::tensor::Tensor;
use rand::Rng;

pub const INIT_STD: f64 = 0.02;

/// Box-Muller normal draw; keeps initialization free of extra dependencies.
fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    let mut u1: f64 = rng.random();
    while u1 <= 0.0 {
        u1 = rng.random();
    }
    let u2: f64 = rng.random();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn init_matrix(seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> Tensor {
    let mut rng = stream(seed, name, &[rows as u64, cols as u64]);
    let data = (0..rows * cols).map(|_| normal(&mut rng, std)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Linear layer parameters: `{prefix}.w` (in x out) and `{prefix}.b` (1 x out).
pub fn init_linear(store: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, out_dim: usize) {
    store.insert(&format!("{prefix}.w"), init_matrix(seed, &format!("{prefix}.w"), in_dim, out_dim, INIT_STD));
    store.insert(&format!("{prefix}.b"), Tensor::zeros(1, out_dim));
}

pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = bind(g, store, &format!("{prefix}.w"));
    let b = bind(g, store, &format!("{prefix}.b"));
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Layer-norm parameters: `{prefix}.gain` (ones) and `{prefix}.bias` (zeros).
pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(&format!("{prefix}.gain"), Tensor::full(1, dim, 1.0));
    store.insert(&format!("{prefix}.bias"), Tensor::zeros(1, dim));
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = bind(g, store, &format!("{prefix}.gain"));
    let bias = bind(g, store, &format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias)
}

/// Attention parameter group: query/key/value/output projections.
pub fn init_attention(store: &mut ParamStore, seed: u64, prefix: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, seed, &format!("{prefix}.{proj}"), d, d);
    }
}

/// Multi-head attention with precomputed keys/values. `q_input` is projected
/// here; `k`/`v` are the already-projected (len x d) tensors for the source.
pub fn attention_with_kv(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    q_input: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let d = g.value(k).cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(g, store, &format!("{prefix}.q"), q_input)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let weights = ops::attention_weights(g, qh, kh, scale, mask)?;
        heads.push(g.matmul(weights, vh)?);
    }
    let concat = g.concat_cols(&heads)?;
    linear(g, store, &format!("{prefix}.o"), concat)
}

/// Project keys and values for an attention source.
pub fn project_kv(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    source: Var,
) -> Result<(Var, Var)> {
    let k = linear(g, store, &format!("{prefix}.k"), source)?;
    let v = linear(g, store, &format!("{prefix}.v"), source)?;
    Ok((k, v))
}

/// Full multi-head attention (projects q, k, v from the given inputs).
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    q_input: Var,
    kv_input: Var,
    n_heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let (k, v) = project_kv(g, store, prefix, kv_input)?;
    attention_with_kv(g, store, prefix, q_input, k, v, n_heads, mask)
}

pub fn init_ffn(store: &mut ParamStore, seed: u64, prefix: &str, d: usize, ff_dim: usize) {
    init_linear(store, seed, &format!("{prefix}.1"), d, ff_dim);
    init_linear(store, seed, &format!("{prefix}.2"), ff_dim, d);
}

pub fn ffn(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, store, &format!("{prefix}.1"), x)?;
    let h = g.gelu(h)?;
    linear(g, store, &format!("{prefix}.2"), h)
}

/// Post-LN encoder layer parameter group.
pub fn init_encoder_layer(store: &mut ParamStore, seed: u64, prefix: &str, d: usize, ff_dim: usize) {
    init_attention(store, seed, &format!("{prefix}.attn"), d);
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    init_ffn(store, seed, &format!("{prefix}.ff"), d, ff_dim);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
}

/// x = LN2(x' + FF(x')) where x' = LN1(x + MHSA(x)).
pub fn encoder_layer(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    n_heads: usize,
) -> Result<Var> {
    let sa = multi_head_attention(g, store, &format!("{prefix}.attn"), x, x, n_heads, None)?;
    let res = g.add(x, sa)?;
    let x = layer_norm(g, store, &format!("{prefix}.ln1"), res)?;
    let ff = ffn(g, store, &format!("{prefix}.ff"), x)?;
    let res = g.add(x, ff)?;
    layer_norm(g, store, &format!("{prefix}.ln2"), res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_name() {
        let a = init_matrix(5, "enc.0.attn.q.w", 4, 4, INIT_STD);
        let b = init_matrix(5, "enc.0.attn.q.w", 4, 4, INIT_STD);
        let c = init_matrix(5, "enc.0.attn.k.w", 4, 4, INIT_STD);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn encoder_layer_preserves_shape() {
        let mut store = ParamStore::new();
        init_encoder_layer(&mut store, 1, "enc.0", 8, 16);
        let mut g = Graph::new();
        let x = g.constant(init_matrix(2, "x", 5, 8, 0.5));
        let y = encoder_layer(&mut g, &store, "enc.0", x, 2).unwrap();
        assert_eq!(g.value(y).shape(), (5, 8));
    }
}
