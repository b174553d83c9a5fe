//! Straight-through Gumbel-softmax sampling over vocabulary logits.

use crate::error::{QgError, Result};
use crate::substrate::graph::{Graph, Var};
use crate::substrate::tensor::Tensor;
use rand::Rng;

/// Result of one straight-through draw.
pub struct GumbelSample {
    /// Exactly one-hot in the forward pass; backward flows through `soft`.
    pub hard: Var,
    /// softmax((logits + gumbel) / tau), the differentiable companion.
    pub soft: Var,
    /// Sampled token index (argmax of `soft`, ties broken by lowest index).
    pub index: usize,
}

/// Gumbel(0,1) noise via inverse CDF -ln(-ln(u)) with u drawn from the open
/// interval (0,1) so the result is always finite.
pub fn gumbel_noise(rng: &mut impl Rng, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        while u <= 0.0 {
            u = rng.random();
        }
        data.push(-(-u.ln()).ln());
    }
    Tensor::new(1, n, data).unwrap()
}

/// Straight-through Gumbel-softmax: forward emits the one-hot of the sampled
/// index; gradients propagate as if the output were the soft distribution.
pub fn gumbel_softmax_st(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<GumbelSample> {
    if tau <= 0.0 {
        return Err(QgError::Validation(format!("gumbel temperature must be > 0, got {tau}")));
    }
    let (rows, vs) = g.value(logits).shape();
    if rows != 1 {
        return Err(QgError::shape("gumbel_softmax_st", format!("logits must be 1 x vs, got [{rows}, {vs}]")));
    }
    let noise = g.constant(gumbel_noise(rng, vs));
    let noisy = g.add(logits, noise)?;
    let scaled = g.scale(noisy, 1.0 / tau)?;
    let soft = g.softmax_rows(scaled)?;
    let index = argmax(g.value(soft).data());
    let hard = g.straight_through(Tensor::one_hot(vs, index), soft)?;
    Ok(GumbelSample { hard, soft, index })
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::rng::stream;

    #[test]
    fn rejects_non_positive_tau() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::row(&[0.0, 1.0]));
        let mut rng = stream(1, "test", &[]);
        assert!(gumbel_softmax_st(&mut g, logits, 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_st(&mut g, logits, -1.0, &mut rng).is_err());
    }

    #[test]
    fn dominant_logit_wins() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::row(&[1000.0, 0.0, 0.0]));
        let mut rng = stream(3, "test", &[]);
        let s = gumbel_softmax_st(&mut g, logits, 1.0, &mut rng).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(g.value(s.hard).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn hard_is_one_hot_and_soft_sums_to_one() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::row(&[0.2, -0.4, 0.9, 0.0]));
        let mut rng = stream(7, "test", &[]);
        let s = gumbel_softmax_st(&mut g, logits, 0.7, &mut rng).unwrap();
        let hard = g.value(s.hard);
        assert_eq!(hard.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(hard.iter().filter(|v| **v == 0.0).count(), 3);
        let soft_sum: f64 = g.value(s.soft).iter().sum();
        assert!((soft_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_seed_reproduces_draws() {
        let draw = || {
            let mut g = Graph::new();
            let logits = g.leaf(Tensor::row(&[0.1, 0.3, -0.2]));
            let mut rng = stream(11, "gumbel", &[5]);
            let mut seq = Vec::new();
            for _ in 0..20 {
                seq.push(gumbel_softmax_st(&mut g, logits, 1.0, &mut rng).unwrap().index);
            }
            seq
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn st_gradient_equals_soft_branch_gradient() {
        // d sum(hard) / d logits must equal d sum(soft) / d logits.
        let mut rng = stream(2, "test", &[]);
        let noise = gumbel_noise(&mut rng, 3);

        let mut g1 = Graph::new();
        let l1 = g1.leaf(Tensor::row(&[0.5, -0.1, 0.2]));
        let n1 = g1.constant(noise.clone());
        let noisy1 = g1.add(l1, n1).unwrap();
        let soft1 = g1.softmax_rows(noisy1).unwrap();
        let hard = g1
            .straight_through(Tensor::one_hot(3, argmax(g1.value(soft1).data())), soft1)
            .unwrap();
        let w = g1.constant(Tensor::new(3, 1, vec![0.3, -1.2, 0.8]).unwrap());
        let y1 = g1.matmul(hard, w).unwrap();
        g1.backward(y1).unwrap();
        let grad_st = g1.grad(l1).unwrap().data().to_vec();

        let mut g2 = Graph::new();
        let l2 = g2.leaf(Tensor::row(&[0.5, -0.1, 0.2]));
        let n2 = g2.constant(noise);
        let noisy2 = g2.add(l2, n2).unwrap();
        let soft2 = g2.softmax_rows(noisy2).unwrap();
        let w2 = g2.constant(Tensor::new(3, 1, vec![0.3, -1.2, 0.8]).unwrap());
        let y2 = g2.matmul(soft2, w2).unwrap();
        g2.backward(y2).unwrap();
        let grad_soft = g2.grad(l2).unwrap().data().to_vec();

        for (a, b) in grad_st.iter().zip(grad_soft.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
