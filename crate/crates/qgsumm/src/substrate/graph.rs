//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Operations append nodes to a `Graph`; `backward` replays the tape in
//! reverse, accumulating gradients. Leaf nodes (and any node explicitly
//! retained) keep persistent gradient buffers so repeated backward calls
//! accumulate, per the optimizer contract.

use crate::error::{QgError, Result};
use crate::substrate::tensor::Tensor;
use std::collections::BTreeMap;

/// Handle to a node in a `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    /// C = A · Bᵀ where B is (n × k); used for attention scores and the tied LM head.
    MatmulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// Broadcast add of a (1 × c) row to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Gelu(Var),
    Relu(Var),
    /// Row gather from an embedding table; backward scatter-adds.
    EmbedRows { table: Var, ids: Vec<u32> },
    MeanRows(Var),
    SumAll(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    ClampMin(Var, f64),
    /// Forward emits a fixed value; backward passes gradients to `0` untouched.
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires: bool,
    retain: bool,
    grad: Option<Tensor>,
}

/// Variance clamp for layer normalization; a zero-variance row normalizes to zeros.
pub const LAYER_NORM_VAR_CLAMP: f64 = 1e-12;

pub struct Graph {
    nodes: Vec<Node>,
    named: BTreeMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), named: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Persistent gradient of a leaf or retained node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    pub fn clear_grad(&mut self, v: Var) {
        self.nodes[v.0].grad = None;
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true, true)
    }

    /// Non-differentiable input (detached constant).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false, false)
    }

    /// Named leaf, memoized by name: asking for the same name twice returns
    /// the same node so gradients from all uses accumulate together.
    pub fn named_leaf(&mut self, name: &str, value: &Tensor, requires: bool) -> Var {
        if let Some(v) = self.named.get(name) {
            return *v;
        }
        let v = self.push_unchecked(value.clone(), Op::Leaf, requires, requires);
        self.named.insert(name.to_string(), v);
        v
    }

    /// Gradients of all named leaves that required gradients.
    pub fn named_grads(&self) -> BTreeMap<String, &Tensor> {
        self.named
            .iter()
            .filter_map(|(n, v)| self.nodes[v.0].grad.as_ref().map(|g| (n.clone(), g)))
            .collect()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires: bool, retain: bool) -> Var {
        self.nodes.push(Node { value, op, requires, retain, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, opname: &'static str, value: Tensor, op: Op, requires: bool) -> Result<Var> {
        if let Some((index, v)) = value.first_non_finite() {
            return Err(QgError::NonFinite { op: opname, index, value: v });
        }
        Ok(self.push_unchecked(value, op, requires, false))
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).shape();
        let (k2, n) = self.value(b).shape();
        if k != k2 {
            return Err(QgError::shape(
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}]: inner dimensions {k} != {k2}"),
            ));
        }
        let mut out = Tensor::zeros(m, n);
        gemm_rowmajor(m, k, n, self.value(a).data(), self.value(b).data(), out.data_mut());
        let requires = self.req(a) || self.req(b);
        self.push("matmul", out, Op::Matmul(a, b), requires)
    }

    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).shape();
        let (n, k2) = self.value(b).shape();
        if k != k2 {
            return Err(QgError::shape(
                "matmul_transb",
                format!("[{m}, {k}] x [{n}, {k2}]^T: inner dimensions {k} != {k2}"),
            ));
        }
        let mut out = Tensor::zeros(m, n);
        if m > 0 && n > 0 && k > 0 {
            unsafe {
                matrixmultiply::dgemm(
                    m, k, n, 1.0,
                    self.value(a).data().as_ptr(), k as isize, 1,
                    self.value(b).data().as_ptr(), 1, k as isize,
                    0.0,
                    out.data_mut().as_mut_ptr(), n as isize, 1,
                );
            }
        }
        let requires = self.req(a) || self.req(b);
        self.push("matmul_transb", out, Op::MatmulTransB(a, b), requires)
    }

    fn binary_elementwise(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(QgError::shape(opname, format!("{sa:?} vs {sb:?}")));
        }
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(sa.0, sa.1, data)?;
        let requires = self.req(a) || self.req(b);
        self.push(opname, out, op, requires)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        let (r1, c2) = self.value(row).shape();
        if r1 != 1 || c2 != c {
            return Err(QgError::shape(
                "add_row",
                format!("matrix [{m}, {c}] + row [{r1}, {c2}]: row must be [1, {c}]"),
            ));
        }
        let mut out = self.value(a).clone();
        for r in 0..m {
            for j in 0..c {
                let v = out.at(r, j) + self.value(row).at(0, j);
                out.set(r, j, v);
            }
        }
        let requires = self.req(a) || self.req(row);
        self.push("add_row", out, Op::AddRow(a, row), requires)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| x * s).collect();
        let (m, c) = self.value(a).shape();
        let out = Tensor::new(m, c, data)?;
        let requires = self.req(a);
        self.push("scale", out, Op::Scale(a, s), requires)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| x + s).collect();
        let (m, c) = self.value(a).shape();
        let out = Tensor::new(m, c, data)?;
        let requires = self.req(a);
        self.push("add_scalar", out, Op::AddScalar(a, s), requires)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(QgError::shape("concat_rows", "no parts".to_string()));
        }
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.value(p).shape();
            if pc != c {
                return Err(QgError::shape(
                    "concat_rows",
                    format!("column mismatch: {pc} vs {c}"),
                ));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, c, data)?;
        let requires = parts.iter().any(|&p| self.req(p));
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), requires)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(QgError::shape("concat_cols", "no parts".to_string()));
        }
        let m = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let (pm, pc) = self.value(p).shape();
            if pm != m {
                return Err(QgError::shape("concat_cols", format!("row mismatch: {pm} vs {m}")));
            }
            cols += pc;
        }
        let mut out = Tensor::zeros(m, cols);
        let mut offset = 0;
        for &p in parts {
            let pc = self.value(p).cols();
            for r in 0..m {
                for j in 0..pc {
                    let v = self.value(p).at(r, j);
                    out.set(r, offset + j, v);
                }
            }
            offset += pc;
        }
        let requires = parts.iter().any(|&p| self.req(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), requires)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        if start + len > m {
            return Err(QgError::shape(
                "slice_rows",
                format!("rows {start}..{} out of [{m}, {c}]", start + len),
            ));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(len, c, data)?;
        let requires = self.req(a);
        self.push("slice_rows", out, Op::SliceRows(a, start, len), requires)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        if start + len > c {
            return Err(QgError::shape(
                "slice_cols",
                format!("cols {start}..{} out of [{m}, {c}]", start + len),
            ));
        }
        let mut out = Tensor::zeros(m, len);
        for r in 0..m {
            for j in 0..len {
                let v = self.value(a).at(r, start + j);
                out.set(r, j, v);
            }
        }
        let requires = self.req(a);
        self.push("slice_cols", out, Op::SliceCols(a, start, len), requires)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        if c == 0 {
            return Err(QgError::shape("softmax_rows", "zero columns".to_string()));
        }
        let mut out = Tensor::zeros(m, c);
        for r in 0..m {
            let row = self.value(a).row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out.set(r, j, e);
                sum += e;
            }
            for j in 0..c {
                let v = out.at(r, j) / sum;
                out.set(r, j, v);
            }
        }
        let requires = self.req(a);
        self.push("softmax_rows", out, Op::SoftmaxRows(a), requires)
    }

    /// Row-wise layer normalization with learnable gain and bias (both 1 × c).
    /// Variance is clamped at `LAYER_NORM_VAR_CLAMP`, so constant rows map to zeros
    /// before the affine transform.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, c) = self.value(x).shape();
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let s = self.value(v).shape();
            if s != (1, c) {
                return Err(QgError::shape(
                    "layer_norm",
                    format!("{name} shape {s:?}, expected [1, {c}]"),
                ));
            }
        }
        let mut out = Tensor::zeros(m, c);
        for r in 0..m {
            let row = self.value(x).row_slice(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / var.max(LAYER_NORM_VAR_CLAMP).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_std;
                out.set(r, j, self.value(gain).at(0, j) * xhat + self.value(bias).at(0, j));
            }
        }
        let requires = self.req(x) || self.req(gain) || self.req(bias);
        self.push("layer_norm", out, Op::LayerNorm { x, gain, bias }, requires)
    }

    fn unary(
        &mut self,
        opname: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        let data = self.value(a).iter().map(|x| f(*x)).collect();
        let out = Tensor::new(m, c, data)?;
        let requires = self.req(a);
        self.push(opname, out, op, requires)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, gelu_scalar, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary("clamp_min", a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    /// Embedding lookup by token id (row gather). Gradients scatter-add into
    /// the table; equivalent to the one-hot × table product on integer input.
    pub fn embed_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, d) = self.value(table).shape();
        let mut out = Tensor::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= vocab {
                return Err(QgError::shape(
                    "embed_rows",
                    format!("id {id} out of vocabulary {vocab}"),
                ));
            }
            let src = self.value(table).row_slice(id as usize).to_vec();
            out.data_mut()[r * d..(r + 1) * d].copy_from_slice(&src);
        }
        let requires = self.req(table);
        self.push("embed_rows", out, Op::EmbedRows { table, ids: ids.to_vec() }, requires)
    }

    /// Column-wise mean over rows: (m × c) → (1 × c).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, c) = self.value(a).shape();
        if m == 0 {
            return Err(QgError::shape("mean_rows", "zero rows".to_string()));
        }
        let mut out = Tensor::zeros(1, c);
        for r in 0..m {
            for j in 0..c {
                let v = out.at(0, j) + self.value(a).at(r, j);
                out.set(0, j, v);
            }
        }
        for j in 0..c {
            let v = out.at(0, j) / m as f64;
            out.set(0, j, v);
        }
        let requires = self.req(a);
        self.push("mean_rows", out, Op::MeanRows(a), requires)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).iter().sum();
        let requires = self.req(a);
        self.push("sum_all", Tensor::scalar(total), Op::SumAll(a), requires)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Straight-through estimator node: forward emits `hard`, backward passes
    /// incoming gradients to `soft` unchanged.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.value(soft).shape() {
            return Err(QgError::shape(
                "straight_through",
                format!("hard {:?} vs soft {:?}", hard.shape(), self.value(soft).shape()),
            ));
        }
        let requires = self.req(soft);
        self.push("straight_through", hard, Op::StraightThrough(soft), requires)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Gradients accumulate into leaves and
    /// retained nodes; calling backward again adds on top of previous results.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(QgError::Validation(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires {
            return Ok(()); // nothing on the tape requires gradients
        }
        let mut scratch: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        scratch[root.0] = Some(Tensor::scalar(1.0));
        let mut retained: Vec<(usize, Tensor)> = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            if !self.nodes[i].requires {
                continue;
            }
            if self.nodes[i].retain {
                retained.push((i, g.clone()));
            }
            self.propagate(i, &g, &mut scratch);
        }

        for (i, g) in retained {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, scratch: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let accum = |scratch: &mut [Option<Tensor>], v: Var, update: &dyn Fn(&mut Tensor)| {
            if !self.nodes[v.0].requires {
                return;
            }
            let (m, c) = self.nodes[v.0].value.shape();
            let slot = &mut scratch[v.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(m, c));
            }
            update(slot.as_mut().unwrap());
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols();
                accum(scratch, *a, &|da| {
                    // dA += dC · Bᵀ
                    if m > 0 && n > 0 && k > 0 {
                        unsafe {
                            matrixmultiply::dgemm(
                                m, n, k, 1.0,
                                g.data().as_ptr(), n as isize, 1,
                                self.value(*b).data().as_ptr(), 1, n as isize,
                                1.0,
                                da.data_mut().as_mut_ptr(), k as isize, 1,
                            );
                        }
                    }
                });
                accum(scratch, *b, &|db| {
                    // dB += Aᵀ · dC
                    if m > 0 && n > 0 && k > 0 {
                        unsafe {
                            matrixmultiply::dgemm(
                                k, m, n, 1.0,
                                self.value(*a).data().as_ptr(), 1, k as isize,
                                g.data().as_ptr(), n as isize, 1,
                                1.0,
                                db.data_mut().as_mut_ptr(), n as isize, 1,
                            );
                        }
                    }
                });
            }
            Op::MatmulTransB(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).rows();
                accum(scratch, *a, &|da| {
                    // dA += dC · B
                    if m > 0 && n > 0 && k > 0 {
                        unsafe {
                            matrixmultiply::dgemm(
                                m, n, k, 1.0,
                                g.data().as_ptr(), n as isize, 1,
                                self.value(*b).data().as_ptr(), k as isize, 1,
                                1.0,
                                da.data_mut().as_mut_ptr(), k as isize, 1,
                            );
                        }
                    }
                });
                accum(scratch, *b, &|db| {
                    // dB += dCᵀ · A
                    if m > 0 && n > 0 && k > 0 {
                        unsafe {
                            matrixmultiply::dgemm(
                                n, m, k, 1.0,
                                g.data().as_ptr(), 1, n as isize,
                                self.value(*a).data().as_ptr(), k as isize, 1,
                                1.0,
                                db.data_mut().as_mut_ptr(), k as isize, 1,
                            );
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                accum(scratch, *a, &|da| da.add_assign(g));
                accum(scratch, *b, &|db| db.add_assign(g));
            }
            Op::Sub(a, b) => {
                accum(scratch, *a, &|da| da.add_assign(g));
                accum(scratch, *b, &|db| db.add_scaled_assign(g, -1.0));
            }
            Op::Mul(a, b) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), bv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*b).iter()) {
                        *d += gv * bv;
                    }
                });
                accum(scratch, *b, &|db| {
                    for ((d, gv), av) in db.data_mut().iter_mut().zip(g.iter()).zip(self.value(*a).iter()) {
                        *d += gv * av;
                    }
                });
            }
            Op::Div(a, b) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), bv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*b).iter()) {
                        *d += gv / bv;
                    }
                });
                accum(scratch, *b, &|db| {
                    for (((d, gv), av), bv) in db
                        .data_mut()
                        .iter_mut()
                        .zip(g.iter())
                        .zip(self.value(*a).iter())
                        .zip(self.value(*b).iter())
                    {
                        *d -= gv * av / (bv * bv);
                    }
                });
            }
            Op::AddRow(a, row) => {
                accum(scratch, *a, &|da| da.add_assign(g));
                accum(scratch, *row, &|dr| {
                    let (m, c) = g.shape();
                    for r in 0..m {
                        for j in 0..c {
                            let v = dr.at(0, j) + g.at(r, j);
                            dr.set(0, j, v);
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                accum(scratch, *a, &|da| da.add_scaled_assign(g, *s));
            }
            Op::AddScalar(a, _) => {
                accum(scratch, *a, &|da| da.add_assign(g));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    accum(scratch, p, &|dp| {
                        for i in 0..r {
                            for j in 0..c {
                                let v = dp.at(i, j) + g.at(start + i, j);
                                dp.set(i, j, v);
                            }
                        }
                    });
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    accum(scratch, p, &|dp| {
                        for i in 0..r {
                            for j in 0..c {
                                let v = dp.at(i, j) + g.at(i, start + j);
                                dp.set(i, j, v);
                            }
                        }
                    });
                    start += c;
                }
            }
            Op::SliceRows(a, start, len) => {
                accum(scratch, *a, &|da| {
                    let c = g.cols();
                    for i in 0..*len {
                        for j in 0..c {
                            let v = da.at(start + i, j) + g.at(i, j);
                            da.set(start + i, j, v);
                        }
                    }
                });
            }
            Op::SliceCols(a, start, len) => {
                accum(scratch, *a, &|da| {
                    let m = g.rows();
                    for i in 0..m {
                        for j in 0..*len {
                            let v = da.at(i, start + j) + g.at(i, j);
                            da.set(i, start + j, v);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                accum(scratch, *a, &|da| {
                    let (m, c) = y.shape();
                    for r in 0..m {
                        let dot: f64 = (0..c).map(|j| g.at(r, j) * y.at(r, j)).sum();
                        for j in 0..c {
                            let v = da.at(r, j) + y.at(r, j) * (g.at(r, j) - dot);
                            da.set(r, j, v);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let (m, c) = self.value(*x).shape();
                // Recompute per-row statistics from the stored input.
                let mut xhat = Tensor::zeros(m, c);
                let mut inv_std = vec![0.0; m];
                let mut clamped = vec![false; m];
                for r in 0..m {
                    let row = self.value(*x).row_slice(r);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    clamped[r] = var <= LAYER_NORM_VAR_CLAMP;
                    inv_std[r] = 1.0 / var.max(LAYER_NORM_VAR_CLAMP).sqrt();
                    for j in 0..c {
                        xhat.set(r, j, (row[j] - mean) * inv_std[r]);
                    }
                }
                accum(scratch, *bias, &|db| {
                    for r in 0..m {
                        for j in 0..c {
                            let v = db.at(0, j) + g.at(r, j);
                            db.set(0, j, v);
                        }
                    }
                });
                accum(scratch, *gain, &|dg| {
                    for r in 0..m {
                        for j in 0..c {
                            let v = dg.at(0, j) + g.at(r, j) * xhat.at(r, j);
                            dg.set(0, j, v);
                        }
                    }
                });
                accum(scratch, *x, &|dx| {
                    for r in 0..m {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..c {
                            let dxh = g.at(r, j) * self.value(*gain).at(0, j);
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat.at(r, j);
                        }
                        mean_dxhat /= c as f64;
                        mean_dxhat_xhat /= c as f64;
                        for j in 0..c {
                            let dxh = g.at(r, j) * self.value(*gain).at(0, j);
                            // When the variance is clamped the x→var path is dead.
                            let centered = if clamped[r] {
                                dxh - mean_dxhat
                            } else {
                                dxh - mean_dxhat - xhat.at(r, j) * mean_dxhat_xhat
                            };
                            let v = dx.at(r, j) + inv_std[r] * centered;
                            dx.set(r, j, v);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), xv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*a).iter()) {
                        *d += gv * gelu_grad_scalar(*xv);
                    }
                });
            }
            Op::Relu(a) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), xv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*a).iter()) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::EmbedRows { table, ids } => {
                accum(scratch, *table, &|dt| {
                    let d = g.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            let v = dt.at(id as usize, j) + g.at(r, j);
                            dt.set(id as usize, j, v);
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                accum(scratch, *a, &|da| {
                    let (m, c) = da.shape();
                    let inv = 1.0 / m as f64;
                    for r in 0..m {
                        for j in 0..c {
                            let v = da.at(r, j) + g.at(0, j) * inv;
                            da.set(r, j, v);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gs = g.item();
                accum(scratch, *a, &|da| {
                    for d in da.data_mut() {
                        *d += gs;
                    }
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                accum(scratch, *a, &|da| {
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.iter()).zip(y.iter()) {
                        *d += gv * yv;
                    }
                });
            }
            Op::Log(a) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), xv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*a).iter()) {
                        *d += gv / xv;
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                accum(scratch, *a, &|da| {
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.iter()).zip(y.iter()) {
                        *d += gv * 0.5 / yv;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                accum(scratch, *a, &|da| {
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.iter()).zip(y.iter()) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accum(scratch, *a, &|da| {
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.iter()).zip(y.iter()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                accum(scratch, *a, &|da| {
                    for ((d, gv), xv) in da.data_mut().iter_mut().zip(g.iter()).zip(self.value(*a).iter()) {
                        if *xv > *floor {
                            *d += gv;
                        }
                    }
                });
            }
            Op::StraightThrough(soft) => {
                accum(scratch, *soft, &|ds| ds.add_assign(g));
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn gemm_rowmajor(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
