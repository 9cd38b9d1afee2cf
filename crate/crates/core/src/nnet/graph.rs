use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Grads, NnetError, ParamId, ParamStore, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Which residual the expectile weight is keyed on.
///
/// `Intent` uses `u = target - pred`, so `tau > 0.5` pulls the prediction
/// toward the upper expectile. `Reversed` uses `d = pred - target` with the
/// indicator on `d < 0`, which does the opposite for the same `tau`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectileSign {
    #[default]
    Intent,
    Reversed,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    SliceRows(NodeId, usize),
    Reshape(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Sum(NodeId),
    CrossEntropy(NodeId, Vec<usize>),
    Expectile { pred: NodeId, target: T, tau: T, sign: ExpectileSign },
    MeanSquaredError(NodeId, Tensor<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::SoftmaxRows(_) => "softmax",
            Op::MeanRows(_) => "mean_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(_) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::Sum(_) => "sum",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Expectile { .. } => "expectile",
            Op::MeanSquaredError(..) => "mse",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Define-by-run tape. Every primitive checks its output for NaN/Inf and
/// fails with the offending node's name.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    corrupt: Option<&'static str>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), corrupt: None }
    }

    /// Testing aid: scales the backward rule of every node with the given op
    /// name by 1.01 so that gradient checks can be shown to catch it.
    pub fn with_corrupted_backward(params: &'p ParamStore<T>, op: &'static str) -> Self {
        Graph { params, nodes: Vec::new(), corrupt: Some(op) }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.value(id).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, parents: &[NodeId]) -> Result<NodeId, NnetError> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(NnetError::NonFinite { node: format!("{}#{id}", op.name()) });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        Ok(NodeId(id))
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<(), NnetError> {
        if ok {
            Ok(())
        } else {
            Err(NnetError::Shape(what()))
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Result<NodeId, NnetError> {
        self.push(Op::Input, t, &[])
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let requires_grad = !self.params.is_frozen(id.group);
        self.nodes.push(Node { op: Op::Param(id), value: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa[1] == sb[0], || format!("matmul {sa:?} x {sb:?}"))?;
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v, &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa[1] == sb[1], || format!("matmul_bt {sa:?} x {sb:?}ᵀ"))?;
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(Op::MatMulBt(a, b), v, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("add {sa:?} + {sb:?}"))?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v, &[a, b])
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, NnetError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        self.check(sr[0] == 1 && sr[1] == sa[1], || format!("add_row {sa:?} + {sr:?}"))?;
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa[0] {
            for (x, &y) in v.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, row), v, &[a, row])
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId, NnetError> {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NnetError> {
        let v = self.value(a).map(T::tanh);
        self.push(Op::Tanh(a), v, &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, NnetError> {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v, &[a])
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, NnetError> {
        let x = self.value(a);
        let [n, m] = x.shape();
        self.check(n > 0, || "mean_rows of empty tensor".into())?;
        let mut v = Tensor::zeros(1, m);
        for i in 0..n {
            for (o, &y) in v.data_mut().iter_mut().zip(x.row(i)) {
                *o += y;
            }
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        v.scale_in_place(inv);
        self.push(Op::MeanRows(a), v, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NnetError> {
        self.check(!parts.is_empty(), || "concat_rows of nothing".into())?;
        let m = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            self.check(s[1] == m, || format!("concat_rows width {} vs {m}", s[1]))?;
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, m, data), parts)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa[0] == sb[0], || format!("concat_cols {sa:?} | {sb:?}"))?;
        let (x, y) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(x.len() + y.len());
        for i in 0..sa[0] {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(y.row(i));
        }
        self.push(Op::ConcatCols(a, b), Tensor::from_vec(sa[0], sa[1] + sb[1], data), &[a, b])
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NnetError> {
        let s = self.shape(a);
        self.check(start < end && end <= s[0], || format!("slice_rows {start}..{end} of {s:?}"))?;
        let x = self.value(a);
        let data = x.data()[start * s[1]..end * s[1]].to_vec();
        self.push(Op::SliceRows(a, start), Tensor::from_vec(end - start, s[1], data), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, NnetError> {
        let s = self.shape(a);
        self.check(rows * cols == s[0] * s[1], || format!("reshape {s:?} to [{rows}, {cols}]"))?;
        let v = self.value(a).clone().reshape(rows, cols);
        self.push(Op::Reshape(a), v, &[a])
    }

    /// Embedding lookup: picks rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId, NnetError> {
        let s = self.shape(a);
        self.check(idx.iter().all(|&i| i < s[0]), || format!("gather index out of range for {s:?}"))?;
        let x = self.value(a);
        let data = idx.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
        self.push(Op::GatherRows(a, idx.to_vec()), Tensor::from_vec(idx.len(), s[1], data), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NnetError> {
        let v = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(v), &[a])
    }

    /// `(1/n) Σ_r -log softmax(logits_r)[labels_r]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, NnetError> {
        let s = self.shape(logits);
        self.check(labels.len() == s[0] && labels.iter().all(|&l| l < s[1]), || {
            format!("cross_entropy labels {labels:?} for logits {s:?}")
        })?;
        let x = self.value(logits);
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[l];
        }
        let v = total / T::from_usize(s[0]).unwrap();
        self.push(Op::CrossEntropy(logits, labels.to_vec()), Tensor::scalar(v), &[logits])
    }

    /// Asymmetric squared error `|tau - 1(r < 0)| r²` on a `1 x 1` prediction.
    pub fn expectile(&mut self, pred: NodeId, target: T, tau: T, sign: ExpectileSign) -> Result<NodeId, NnetError> {
        let s = self.shape(pred);
        self.check(s == [1, 1], || format!("expectile prediction must be 1x1, got {s:?}"))?;
        let p = self.value(pred).item();
        let (w, r) = expectile_terms(p, target, tau, sign);
        self.push(Op::Expectile { pred, target, tau, sign }, Tensor::scalar(w * r * r), &[pred])
    }

    /// `mean((a - target)²)` over all entries.
    pub fn mse(&mut self, a: NodeId, target: &Tensor<T>) -> Result<NodeId, NnetError> {
        let s = self.shape(a);
        self.check(s == target.shape(), || format!("mse {s:?} vs target {:?}", target.shape()))?;
        let n = T::from_usize(target.len()).unwrap();
        let v = self.value(a).data().iter().zip(target.data()).map(|(&x, &t)| (x - t) * (x - t)).sum::<T>() / n;
        self.push(Op::MeanSquaredError(a, target.clone()), Tensor::scalar(v), &[a])
    }

    /// `x · W + b` where `W` is `d_in x d_out` and `b` is `1 x d_out`.
    pub fn linear(&mut self, x: NodeId, layer: &Linear) -> Result<NodeId, NnetError> {
        let w = self.param(layer.w);
        let b = self.param(layer.b);
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// `softmax(q kᵀ / √d) v`, returning the attended values and the
    /// attention matrix.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<(NodeId, NodeId), NnetError> {
        let d = self.shape(q)[1];
        let scores = self.matmul_bt(q, k)?;
        let scaled = self.scale(scores, T::one() / T::from_usize(d).unwrap().sqrt())?;
        let attn = self.softmax_rows(scaled)?;
        let out = self.matmul(attn, v)?;
        Ok((out, attn))
    }

    /// Single-head cross-attention with learned input projections: queries
    /// come from `queries`, keys and values from `context`.
    pub fn cross_attention(&mut self, queries: NodeId, context: NodeId, p: &CrossAttention) -> Result<NodeId, NnetError> {
        let q = self.linear(queries, &p.q)?;
        let k = self.linear(context, &p.k)?;
        let v = self.linear(context, &p.v)?;
        Ok(self.attention(q, k, v)?.0)
    }

    /// Reverse pass from a `1 x 1` root. Only non-frozen parameters receive
    /// gradients.
    pub fn backward(&self, root: NodeId) -> Result<Grads<T>, NnetError> {
        let s = self.shape(root);
        self.check(s == [1, 1], || format!("backward root must be 1x1, got {s:?}"))?;
        let mut out = Grads::for_store(self.params);
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let g = match self.corrupt {
                Some(name) if name == node.op.name() => g.map(|v| v * T::lit(1.01)),
                _ => g,
            };
            self.backprop(node, g, &mut grads, &mut out);
        }
        if !out.is_finite() {
            return Err(NnetError::NonFinite { node: "gradient".into() });
        }
        Ok(out)
    }

    fn backprop(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Grads<T>) {
        let mut acc = |id: NodeId, t: Tensor<T>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = node.value.as_ref();
        match &node.op {
            Op::Input => {}
            Op::Param(p) => out.accumulate_param(*p, &g),
            Op::MatMul(a, b) => {
                // C = A B: dA = dC Bᵀ, dB = Aᵀ dC
                acc(*a, g.matmul_bt(self.value(*b)));
                acc(*b, self.value(*a).matmul_at(&g));
            }
            Op::MatMulBt(a, b) => {
                // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.matmul_at(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::AddRow(a, r) => {
                let mut col = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &v) in col.data_mut().iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*a, g);
                acc(*r, col);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::Tanh(a) => {
                let y = y.expect("tanh value");
                let d = Tensor::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect(),
                );
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = y.expect("softmax value");
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: T = g.row(i).iter().zip(y.row(i)).map(|(&gv, &yv)| gv * yv).sum();
                    for ((o, &gv), &yv) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, d);
            }
            Op::MeanRows(a) => {
                let [n, m] = self.shape(*a);
                let inv = T::one() / T::from_usize(n).unwrap();
                let mut d = Tensor::zeros(n, m);
                for i in 0..n {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.data()) {
                        *o = v * inv;
                    }
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    let d = Tensor::from_vec(r, c, g.data()[start * c..(start + r) * c].to_vec());
                    start += r;
                    acc(p, d);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a)[1];
                let cb = self.shape(*b)[1];
                let mut da = Vec::with_capacity(g.rows() * ca);
                let mut db = Vec::with_capacity(g.rows() * cb);
                for i in 0..g.rows() {
                    da.extend_from_slice(&g.row(i)[..ca]);
                    db.extend_from_slice(&g.row(i)[ca..]);
                }
                acc(*a, Tensor::from_vec(g.rows(), ca, da));
                acc(*b, Tensor::from_vec(g.rows(), cb, db));
            }
            Op::SliceRows(a, start) => {
                let [r, c] = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::Reshape(a) => {
                let [r, c] = self.shape(*a);
                acc(*a, g.reshape(r, c));
            }
            Op::GatherRows(a, idx) => {
                let [r, c] = self.shape(*a);
                let mut d = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                acc(*a, Tensor::full(r, c, g.item()));
            }
            Op::CrossEntropy(a, labels) => {
                let x = self.value(*a);
                let scale = g.item() / T::from_usize(labels.len()).unwrap();
                let mut d = x.softmax_rows();
                for (r, &l) in labels.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[l] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                acc(*a, d);
            }
            Op::Expectile { pred, target, tau, sign } => {
                let p = self.value(*pred).item();
                let (w, r) = expectile_terms(p, *target, *tau, *sign);
                // r = target - p (intent) or p - target (literal)
                let dr_dp = match sign {
                    ExpectileSign::Intent => -T::one(),
                    ExpectileSign::Reversed => T::one(),
                };
                acc(*pred, Tensor::scalar(g.item() * T::lit(2.0) * w * r * dr_dp));
            }
            Op::MeanSquaredError(a, target) => {
                let x = self.value(*a);
                let k = g.item() * T::lit(2.0) / T::from_usize(target.len()).unwrap();
                let d = x.data().iter().zip(target.data()).map(|(&xv, &t)| k * (xv - t)).collect();
                acc(*a, Tensor::from_vec(x.rows(), x.cols(), d));
            }
        }
    }
}

fn expectile_terms<T: Scalar>(pred: T, target: T, tau: T, sign: ExpectileSign) -> (T, T) {
    let r = match sign {
        ExpectileSign::Intent => target - pred,
        ExpectileSign::Reversed => pred - target,
    };
    let ind = if r < T::zero() { T::one() } else { T::zero() };
    ((tau - ind).abs(), r)
}

/// Affine layer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

/// Query/key/value projections for one attention head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl Linear {
    /// Uniform Glorot-initialised weight `{prefix}.w` and zero bias `{prefix}.b`.
    pub fn tensors<T: Scalar>(prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Vec<(String, Tensor<T>)> {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = (0..d_in * d_out).map(|_| T::lit(rng.gen_range(-a..a))).collect();
        vec![
            (format!("{prefix}.w"), Tensor::from_vec(d_in, d_out, w)),
            (format!("{prefix}.b"), Tensor::zeros(1, d_out)),
        ]
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, group: &str, prefix: &str) -> Option<Linear> {
        Some(Linear { w: store.id(group, &format!("{prefix}.w"))?, b: store.id(group, &format!("{prefix}.b"))? })
    }
}

impl CrossAttention {
    pub fn tensors<T: Scalar>(
        prefix: &str,
        d_query: usize,
        d_context: usize,
        d: usize,
        d_v: usize,
        rng: &mut impl Rng,
    ) -> Vec<(String, Tensor<T>)> {
        let mut t = Linear::tensors(&format!("{prefix}.q"), d_query, d, rng);
        t.extend(Linear::tensors(&format!("{prefix}.k"), d_context, d, rng));
        t.extend(Linear::tensors(&format!("{prefix}.v"), d_context, d_v, rng));
        t
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, group: &str, prefix: &str) -> Option<CrossAttention> {
        Some(CrossAttention {
            q: Linear::bind(store, group, &format!("{prefix}.q"))?,
            k: Linear::bind(store, group, &format!("{prefix}.k"))?,
            v: Linear::bind(store, group, &format!("{prefix}.v"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_half_norm_gradient_is_outer_product() {
        // y = x W, L = ½‖y‖² → dL/dW = xᵀ y
        let mut s = ParamStore::<f64>::new();
        let w0 = Tensor::from_vec(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        s.add_group("g", vec![("w".into(), w0.clone())]).unwrap();
        let id = s.id("g", "w").unwrap();
        let x0 = Tensor::from_vec(1, 3, vec![1.0, 2.0, -1.0]);
        let mut g = Graph::new(&s);
        let x = g.input(x0.clone()).unwrap();
        let w = g.param(id);
        let y = g.matmul(x, w).unwrap();
        let yv = g.value(y).clone();
        let sq = g.matmul_bt(y, y).unwrap();
        let loss = g.scale(sq, 0.5).unwrap();
        let grads = g.backward(loss).unwrap();
        let expect = x0.matmul_at(&yv);
        for (a, b) in grads.get(id).unwrap().data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_group_gets_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        s.add_group("a", vec![("w".into(), Tensor::full(2, 2, 0.5))]).unwrap();
        s.add_group("b", vec![("w".into(), Tensor::full(2, 2, 0.5))]).unwrap();
        s.set_frozen("a", true);
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::full(1, 2, 1.0)).unwrap();
        let wa = g.param(s.id("a", "w").unwrap());
        let wb = g.param(s.id("b", "w").unwrap());
        let h = g.matmul(x, wa).unwrap();
        let h = g.matmul(h, wb).unwrap();
        let l = g.sum(h).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(s.id("a", "w").unwrap()).is_none());
        assert!(grads.get(s.id("b", "w").unwrap()).is_some());
    }

    #[test]
    fn non_finite_names_the_node() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::full(1, 2, 1e300)).unwrap();
        let err = g.matmul_bt(x, x).unwrap_err();
        assert_eq!(err, NnetError::NonFinite { node: "matmul_bt#1".into() });
    }

    #[test]
    fn attention_special_cases() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let q = g.input(Tensor::from_vec(2, 2, vec![0.3, -1.0, 2.0, 0.5])).unwrap();
        // two identical keys: output is the mean of their values
        let k = g.input(Tensor::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0])).unwrap();
        let v = g.input(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 3.0, 6.0, -1.0])).unwrap();
        let (out, attn) = g.attention(q, k, v).unwrap();
        for r in 0..2 {
            assert!((g.value(attn).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(g.value(out).row(r), &[2.0, 4.0, 1.0]);
        }
        // one key: output is its value
        let k1 = g.input(Tensor::from_vec(1, 2, vec![5.0, -3.0])).unwrap();
        let v1 = g.input(Tensor::from_vec(1, 3, vec![0.25, 0.5, 0.75])).unwrap();
        let (out, _) = g.attention(q, k1, v1).unwrap();
        assert_eq!(g.value(out).row(1), &[0.25, 0.5, 0.75]);
    }

    #[test]
    fn expectile_weights() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let p = g.input(Tensor::scalar(0.0)).unwrap();
        let under = g.expectile(p, 1.0, 0.9, ExpectileSign::Intent).unwrap();
        let over = g.expectile(p, -1.0, 0.9, ExpectileSign::Intent).unwrap();
        assert!((g.value(under).item() - 0.9).abs() < 1e-15);
        assert!((g.value(over).item() - 0.1).abs() < 1e-15);
        let lit = g.expectile(p, 1.0, 0.9, ExpectileSign::Reversed).unwrap();
        assert!((g.value(lit).item() - 0.1).abs() < 1e-15);
    }
}
