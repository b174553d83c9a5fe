//! Finite-difference verification of every elementary op and of random
//! composed graphs (depth <= 5, dims <= 8, multiple seeds).

use qgsumm::substrate::gradcheck::{finite_diff_grad, max_rel_err, DEFAULT_FD_EPS};
use qgsumm::substrate::graph::{Graph, Var};
use qgsumm::substrate::ops;
use qgsumm::substrate::rng::stream;
use qgsumm::substrate::Tensor;
use rand::Rng;

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Check d(build)/d(input_i) against central differences for every input.
fn check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) {
    // analytic
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    assert!(g.value(loss).is_scalar(), "loss must be scalar");
    g.backward(loss).unwrap();

    for (i, input) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        let mut f = |x: &Tensor| {
            let mut g2 = Graph::new();
            let vars2: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| g2.constant(if j == i { x.clone() } else { t.clone() }))
                .collect();
            let l = build(&mut g2, &vars2);
            Ok(g2.value(l).item())
        };
        let numeric = finite_diff_grad(&mut f, input, DEFAULT_FD_EPS).unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= TOL, "input {i}: max rel err {err} > {TOL}");
    }
}

/// Reduce any tensor to a scalar via a fixed random weighting so that every
/// output coordinate influences the loss asymmetrically.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Var {
    let (r, c) = g.value(v).shape();
    let mut rng = stream(seed, "loss-weights", &[r as u64, c as u64]);
    let w = g.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
    let prod = g.mul(v, w).unwrap();
    g.sum_all(prod).unwrap()
}

#[test]
fn matmul_grads() {
    let mut rng = stream(1, "gc", &[]);
    let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    check(&[a, b], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y, 11)
    });
}

#[test]
fn matmul_transb_grads() {
    let mut rng = stream(2, "gc", &[]);
    let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 5, 4, -1.0, 1.0);
    check(&[a, b], |g, v| {
        let y = g.matmul_transb(v[0], v[1]).unwrap();
        weighted_sum(g, y, 12)
    });
}

#[test]
fn elementwise_binary_grads() {
    let mut rng = stream(3, "gc", &[]);
    let a = rand_tensor(&mut rng, 2, 5, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 2, 5, -1.0, 1.0);
    for op in 0..3 {
        check(&[a.clone(), b.clone()], move |g, v| {
            let y = match op {
                0 => g.add(v[0], v[1]).unwrap(),
                1 => g.sub(v[0], v[1]).unwrap(),
                _ => g.mul(v[0], v[1]).unwrap(),
            };
            weighted_sum(g, y, 13 + op)
        });
    }
}

#[test]
fn div_grads_away_from_zero() {
    let mut rng = stream(4, "gc", &[]);
    let a = rand_tensor(&mut rng, 2, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 2, 4, 0.5, 2.0);
    check(&[a, b], |g, v| {
        let y = g.div(v[0], v[1]).unwrap();
        weighted_sum(g, y, 14)
    });
}

#[test]
fn add_row_scale_add_scalar_grads() {
    let mut rng = stream(5, "gc", &[]);
    let a = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let row = rand_tensor(&mut rng, 1, 3, -1.0, 1.0);
    check(&[a, row], |g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        let y = g.scale(y, 0.7).unwrap();
        let y = g.add_scalar(y, -0.3).unwrap();
        weighted_sum(g, y, 15)
    });
}

#[test]
fn concat_and_slice_grads() {
    let mut rng = stream(6, "gc", &[]);
    let a = rand_tensor(&mut rng, 2, 3, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 3, 3, -1.0, 1.0);
    let c = rand_tensor(&mut rng, 2, 4, -1.0, 1.0);
    check(&[a.clone(), b], |g, v| {
        let y = g.concat_rows(&[v[0], v[1]]).unwrap();
        let y = g.slice_rows(y, 1, 3).unwrap();
        weighted_sum(g, y, 16)
    });
    check(&[a, c], |g, v| {
        let y = g.concat_cols(&[v[0], v[1]]).unwrap();
        let y = g.slice_cols(y, 2, 4).unwrap();
        weighted_sum(g, y, 17)
    });
}

#[test]
fn softmax_grads() {
    let mut rng = stream(7, "gc", &[]);
    let a = rand_tensor(&mut rng, 3, 6, -2.0, 2.0);
    check(&[a], |g, v| {
        let y = g.softmax_rows(v[0]).unwrap();
        weighted_sum(g, y, 18)
    });
}

#[test]
fn layer_norm_grads_including_gain_and_bias() {
    let mut rng = stream(8, "gc", &[]);
    let x = rand_tensor(&mut rng, 3, 5, -2.0, 2.0);
    let gain = rand_tensor(&mut rng, 1, 5, 0.5, 1.5);
    let bias = rand_tensor(&mut rng, 1, 5, -0.5, 0.5);
    check(&[x, gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted_sum(g, y, 19)
    });
}

#[test]
fn unary_grads() {
    let mut rng = stream(9, "gc", &[]);
    let a = rand_tensor(&mut rng, 2, 5, -1.5, 1.5);
    let positive = rand_tensor(&mut rng, 2, 5, 0.3, 2.0);
    check(&[a.clone()], |g, v| {
        let y = g.gelu(v[0]).unwrap();
        weighted_sum(g, y, 20)
    });
    check(&[a.clone()], |g, v| {
        let y = g.sigmoid(v[0]).unwrap();
        weighted_sum(g, y, 21)
    });
    check(&[a.clone()], |g, v| {
        let y = g.tanh(v[0]).unwrap();
        weighted_sum(g, y, 22)
    });
    check(&[a], |g, v| {
        let y = g.exp(v[0]).unwrap();
        weighted_sum(g, y, 23)
    });
    check(&[positive.clone()], |g, v| {
        let y = g.log(v[0]).unwrap();
        weighted_sum(g, y, 24)
    });
    check(&[positive], |g, v| {
        let y = g.sqrt(v[0]).unwrap();
        weighted_sum(g, y, 25)
    });
}

#[test]
fn relu_and_clamp_grads_away_from_kinks() {
    // Values kept clear of the kink so central differences are valid.
    let a = Tensor::new(2, 3, vec![-1.2, 0.8, 2.0, -0.5, 1.5, -2.0]).unwrap();
    check(&[a.clone()], |g, v| {
        let y = g.relu(v[0]).unwrap();
        weighted_sum(g, y, 26)
    });
    check(&[a], |g, v| {
        let y = g.clamp_min(v[0], 0.1).unwrap();
        weighted_sum(g, y, 27)
    });
}

#[test]
fn embed_rows_grads() {
    let mut rng = stream(10, "gc", &[]);
    let table = rand_tensor(&mut rng, 6, 4, -1.0, 1.0);
    check(&[table], |g, v| {
        let y = g.embed_rows(v[0], &[2, 0, 5, 2]).unwrap();
        weighted_sum(g, y, 28)
    });
}

#[test]
fn embed_rows_matches_one_hot_matmul() {
    let mut rng = stream(29, "gc", &[]);
    let table = rand_tensor(&mut rng, 6, 4, -1.0, 1.0);
    let ids: Vec<u32> = vec![3, 1, 1, 5];

    let mut g = Graph::new();
    let t = g.leaf(table.clone());
    let gathered = g.embed_rows(t, &ids).unwrap();

    let onehots: Vec<Tensor> = ids.iter().map(|&i| Tensor::one_hot(6, i as usize)).collect();
    let mut oh_data = Vec::new();
    for t in &onehots {
        oh_data.extend_from_slice(t.data());
    }
    let oh = g.constant(Tensor::new(ids.len(), 6, oh_data).unwrap());
    let product = g.matmul(oh, t).unwrap();

    for (a, b) in g.value(gathered).iter().zip(g.value(product).iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn mean_rows_and_reductions_grads() {
    let mut rng = stream(11, "gc", &[]);
    let a = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
    check(&[a.clone()], |g, v| {
        let y = g.mean_rows(v[0]).unwrap();
        weighted_sum(g, y, 30)
    });
    check(&[a], |g, v| g.mean_all(v[0]).unwrap());
}

#[test]
fn attention_block_grads() {
    let mut rng = stream(12, "gc", &[]);
    let q = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let k = rand_tensor(&mut rng, 5, 4, -1.0, 1.0);
    let v = rand_tensor(&mut rng, 5, 4, -1.0, 1.0);
    check(&[q, k, v], |g, vars| {
        let w = ops::attention_weights(g, vars[0], vars[1], 0.5, None).unwrap();
        let out = g.matmul(w, vars[2]).unwrap();
        weighted_sum(g, out, 31)
    });
}

#[test]
fn masked_attention_grads() {
    let mut rng = stream(13, "gc", &[]);
    let x = rand_tensor(&mut rng, 4, 4, -1.0, 1.0);
    check(&[x], |g, vars| {
        let mask = g.constant(ops::causal_mask(4));
        let w = ops::attention_weights(g, vars[0], vars[0], 0.5, Some(mask)).unwrap();
        let out = g.matmul(w, vars[0]).unwrap();
        weighted_sum(g, out, 32)
    });
}

#[test]
fn cross_entropy_grads() {
    let mut g0 = Graph::new();
    let raw = g0.constant(Tensor::row(&[0.4, -0.3, 0.8, 0.1]));
    let _ = g0; // logits turned into distributions inside the builder below
    let logits = Tensor::row(&[0.4, -0.3, 0.8, 0.1]);
    let _ = raw;
    check(&[logits], |g, v| {
        let pred = g.softmax_rows(v[0]).unwrap();
        let target = g.constant(Tensor::row(&[0.7, 0.1, 0.1, 0.1]));
        ops::cross_entropy_soft(g, target, pred).unwrap()
    });
}

#[test]
fn cosine_similarity_grads() {
    let mut rng = stream(14, "gc", &[]);
    let a = rand_tensor(&mut rng, 1, 6, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 1, 6, -1.0, 1.0);
    check(&[a, b], |g, v| {
        let c = ops::cosine_similarity(g, v[0], v[1]).unwrap();
        g.add_scalar(c, 1.0).unwrap()
    });
}

/// Random compositions of smooth ops, depth <= 5, dims <= 8, several seeds.
#[test]
fn random_compositions_match_finite_differences() {
    for seed in 0..7u64 {
        let mut rng = stream(seed, "compose", &[]);
        let rows = rng.random_range(1..=4usize);
        let cols = rng.random_range(2..=8usize);
        let a = rand_tensor(&mut rng, rows, cols, -1.2, 1.2);
        let b = rand_tensor(&mut rng, rows, cols, -1.2, 1.2);
        let depth = rng.random_range(2..=5usize);
        let choices: Vec<u32> = (0..depth).map(|_| rng.random_range(0..7u32)).collect();
        let proj_cols = rng.random_range(2..=6usize);
        let proj = rand_tensor(&mut rng, cols, proj_cols, -1.0, 1.0);
        let gain = rand_tensor(&mut rng, 1, cols, 0.5, 1.5);
        let bias = rand_tensor(&mut rng, 1, cols, -0.3, 0.3);

        check(&[a, b], move |g, v| {
            let mut cur = v[0];
            for &c in &choices {
                cur = match c {
                    0 => g.gelu(cur).unwrap(),
                    1 => g.tanh(cur).unwrap(),
                    2 => g.sigmoid(cur).unwrap(),
                    3 => g.softmax_rows(cur).unwrap(),
                    4 => {
                        let gn = g.constant(gain.clone());
                        let bs = g.constant(bias.clone());
                        g.layer_norm(cur, gn, bs).unwrap()
                    }
                    5 => g.mul(cur, v[1]).unwrap(),
                    _ => g.add(cur, v[1]).unwrap(),
                };
            }
            let p = g.constant(proj.clone());
            let projected = g.matmul(cur, p).unwrap();
            weighted_sum(g, projected, 100 + choices.len() as u64)
        });
    }
}
