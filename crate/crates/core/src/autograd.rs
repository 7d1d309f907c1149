//! A small tape-based reverse-mode autodiff over 2-D arrays.
//!
//! Every tensor in the model is a matrix (tokens x width), so the tape only
//! needs matrix ops. Nodes are appended in evaluation order; `backward` walks
//! them in reverse and only propagates into nodes that lead to a trainable
//! leaf, so frozen weights never pay for their gradients.

use std::fmt::{Debug, Display};

use ndarray::{s, Array1, Array2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type used by the tape (`f32` or `f64`).
pub trait Scalar:
    LinalgScalar + Float + NumAssign + FromPrimitive + ScalarOperand + Debug + Display + Default + Send + Sync
{
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Converts an `f64` constant into the scalar type.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite constant")
}

const LN_EPS: f64 = 1e-5;

/// Ignore sentinel for loss targets.
pub const IGNORE_INDEX: i64 = -100;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = cast::<S>(0.5);
    half * x * (S::one() + (x * cast::<S>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let cdf = cast::<S>(0.5) * (S::one() + (x * cast::<S>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * cast::<S>(0.5)).exp() * cast::<S>(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Row-wise layer normalisation without affine terms; returns (xhat, 1/std).
pub fn normalize_rows<S: Scalar>(x: &Array2<S>) -> (Array2<S>, Array1<S>) {
    let n = cast::<S>(x.ncols() as f64);
    let eps = cast::<S>(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(S::zero(), |acc, &v| acc + v * v) / n;
        let inv = S::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
        *r = inv;
    }
    (xhat, inv_std)
}

/// Numerically stable softmax of one row, honouring `-inf` entries.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return;
    }
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, S),
    ScaleBy(NodeId, NodeId),
    Recip(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Array2<S>,
        inv_std: Array1<S>,
    },
    Softmax(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    MeanRows(NodeId),
    NormalizeRows(NodeId, Array1<S>),
    Transpose(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<i64>,
        probs: Array2<S>,
        count: usize,
    },
}

struct Node<S> {
    value: Array2<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// The tape. Build a fresh graph per forward pass.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id.0].value
    }

    /// Reads a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> S {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// A leaf that receives a gradient when `trainable`.
    pub fn leaf(&mut self, value: Array2<S>, trainable: bool) -> NodeId {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, value: Array2<S>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = self.value(a) + self.value(b);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Add(a, b), g)
    }

    /// Adds a 1 x n row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        let g = self.any_grad(&[a, row]);
        self.push(v, Op::AddRow(a, row), g)
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = self.value(a) * c;
        let g = self.any_grad(&[a]);
        self.push(v, Op::Scale(a, c), g)
    }

    /// Multiplies `a` by the 1x1 node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let c = self.scalar(s);
        let v = self.value(a) * c;
        let g = self.any_grad(&[a, s]);
        self.push(v, Op::ScaleBy(a, s), g)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| S::one() / x);
        let g = self.any_grad(&[a]);
        self.push(v, Op::Recip(a), g)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        let g = self.any_grad(&[a]);
        self.push(v, Op::Gelu(a), g)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (xhat, inv_std) = normalize_rows(self.value(x));
        let v = &xhat * self.value(gain) + self.value(bias);
        let g = self.any_grad(&[x, gain, bias]);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            g,
        )
    }

    /// Row-wise softmax; with `causal`, entry (i, j) for j > i is masked.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> NodeId {
        let mut v = self.value(a).clone();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            if causal {
                row.slice_mut(s![i + 1..]).fill(S::neg_infinity());
            }
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
            if causal {
                row.slice_mut(s![i + 1..]).fill(S::zero());
            }
        }
        let g = self.any_grad(&[a]);
        self.push(v, Op::Softmax(a), g)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        let g = self.any_grad(&[a]);
        self.push(v, Op::SliceCols(a, start), g)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape");
        let g = self.any_grad(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape");
        let g = self.any_grad(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let v = self.value(table).select(Axis(0), ids);
        let g = self.any_grad(&[table]);
        self.push(v, Op::Gather(table, ids.to_vec()), g)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let g = self.any_grad(&[a]);
        self.push(v, Op::MeanRows(a), g)
    }

    /// Scales each row to unit L2 norm. Zero rows are left at zero.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let mut norms = Array1::zeros(v.nrows());
        for (mut row, n) in v.rows_mut().into_iter().zip(norms.iter_mut()) {
            let norm = row.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
            if norm > S::zero() {
                row.mapv_inplace(|x| x / norm);
            }
            *n = norm;
        }
        let g = self.any_grad(&[a]);
        self.push(v, Op::NormalizeRows(a, norms), g)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        let g = self.any_grad(&[a]);
        self.push(v, Op::Transpose(a), g)
    }

    /// Mean cross-entropy over rows whose target is not [`IGNORE_INDEX`].
    /// Returns `None` when no row is supervised.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[i64]) -> Option<NodeId> {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per logit row");
        let mut probs = Array2::zeros(lv.dim());
        let mut total = S::zero();
        let mut count = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if t == IGNORE_INDEX {
                continue;
            }
            let t = t as usize;
            assert!(t < lv.ncols(), "target {t} outside {} classes", lv.ncols());
            let mut row = lv.row(i).to_vec();
            softmax_in_place(&mut row);
            let max = lv.row(i).iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max
                + lv.row(i)
                    .iter()
                    .fold(S::zero(), |acc, &x| acc + (x - max).exp())
                    .ln();
            total = total + (lse - lv[[i, t]]);
            probs.row_mut(i).assign(&Array1::from(row));
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let v = Array2::from_elem((1, 1), total / cast::<S>(count as f64));
        let g = self.any_grad(&[logits]);
        Some(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            g,
        ))
    }

    /// Reverse pass from a 1x1 node.
    pub fn backward(&self, loss: NodeId) -> Gradients<S> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Array2<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<S>>], id: NodeId, g: Array2<S>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node<S>, dy: &Array2<S>, grads: &mut [Option<Array2<S>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let g = dy.dot(&self.value(*b).t());
                    self.accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = self.value(*a).t().dot(dy);
                    self.accumulate(grads, *b, g);
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    let g = dy.dot(self.value(*b));
                    self.accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = dy.t().dot(self.value(*a));
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, dy.clone());
                if self.wants(*row) {
                    let g = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, g);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, dy * *c),
            Op::ScaleBy(a, sc) => {
                if self.wants(*a) {
                    let c = self.scalar(*sc);
                    self.accumulate(grads, *a, dy * c);
                }
                if self.wants(*sc) {
                    let d = (dy * self.value(*a)).sum();
                    self.accumulate(grads, *sc, Array2::from_elem((1, 1), d));
                }
            }
            Op::Recip(a) => {
                let x = self.value(*a);
                let mut g = dy.clone();
                g.zip_mut_with(x, |d, &x| *d = -*d / (x * x));
                self.accumulate(grads, *a, g);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut g = dy.clone();
                g.zip_mut_with(x, |d, &x| *d = *d * gelu_grad(x));
                self.accumulate(grads, *a, g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.wants(*gain) {
                    let g = (dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gain, g);
                }
                if self.wants(*bias) {
                    let g = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *bias, g);
                }
                if self.wants(*x) {
                    let dxhat = dy * self.value(*gain);
                    let n = cast::<S>(dxhat.ncols() as f64);
                    let mut g = Array2::zeros(dxhat.dim());
                    for r in 0..dxhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = dh.sum() / n;
                        let mean_dx = dh.dot(&xh) / n;
                        let inv = inv_std[r];
                        for c in 0..dxhat.ncols() {
                            g[[r, c]] = inv * (dh[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, g);
                }
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let mut g = dy * p;
                for (mut grow, prow) in g.rows_mut().into_iter().zip(p.rows()) {
                    let dot = grow.sum();
                    grow.zip_mut_with(&prow, |v, &pv| *v = *v - pv * dot);
                }
                self.accumulate(grads, *a, g);
            }
            Op::SliceCols(a, start) => {
                let mut g = Array2::zeros(self.value(*a).dim());
                g.slice_mut(s![.., *start..*start + dy.ncols()]).assign(dy);
                self.accumulate(grads, *a, g);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, dy.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, dy.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::Gather(table, ids) => {
                let mut g = Array2::zeros(self.value(*table).dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = g.row_mut(id);
                    row += &dy.row(r);
                }
                self.accumulate(grads, *table, g);
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).nrows();
                let scale = S::one() / cast::<S>(rows as f64);
                let g = dy
                    .broadcast(self.value(*a).dim())
                    .expect("broadcast")
                    .mapv(|v| v * scale);
                self.accumulate(grads, *a, g);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut g = dy.clone();
                for r in 0..g.nrows() {
                    if norms[r] == S::zero() {
                        g.row_mut(r).fill(S::zero());
                        continue;
                    }
                    let dot = y.row(r).dot(&dy.row(r));
                    let inv = S::one() / norms[r];
                    for c in 0..g.ncols() {
                        g[[r, c]] = (dy[[r, c]] - y[[r, c]] * dot) * inv;
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, dy.t().to_owned()),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let scale = dy[[0, 0]] / cast::<S>(*count as f64);
                let mut g = Array2::zeros(probs.dim());
                for (i, &t) in targets.iter().enumerate() {
                    if t == IGNORE_INDEX {
                        continue;
                    }
                    let mut row = g.row_mut(i);
                    row.assign(&probs.row(i));
                    row[t as usize] = row[t as usize] - S::one();
                    row.mapv_inplace(|v| v * scale);
                }
                self.accumulate(grads, *logits, g);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`]; only leaves keep theirs.
pub struct Gradients<S> {
    grads: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<S>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<S>> {
        self.grads[id.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_diff(
        base: &Array2<f64>,
        f: impl Fn(&Array2<f64>) -> f64,
        eps: f64,
    ) -> Array2<f64> {
        let mut out = Array2::zeros(base.dim());
        for idx in 0..base.len() {
            let (r, c) = (idx / base.ncols(), idx % base.ncols());
            let mut p = base.clone();
            p[[r, c]] += eps;
            let mut m = base.clone();
            m[[r, c]] -= eps;
            out[[r, c]] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn composite_graph_gradient_matches_central_differences() {
        let x0 = array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7], [0.0, 0.4, 0.9]];
        let w = array![[0.2, -0.3], [0.5, 0.1], [-0.4, 0.6]];
        let loss_of = |x: &Array2<f64>, grad: bool| {
            let mut g = Graph::<f64>::new();
            let xn = g.leaf(x.clone(), grad);
            let gain = g.constant(array![[1.1, 0.9, 1.0]]);
            let bias = g.constant(array![[0.1, 0.0, -0.1]]);
            let h = g.layer_norm(xn, gain, bias);
            let wn = g.constant(w.clone());
            let h = g.matmul(h, wn);
            let h = g.gelu(h);
            let scores = g.matmul_t(h, h);
            let p = g.softmax(scores, true);
            let o = g.matmul(p, h);
            let o = g.l2_normalize_rows(o);
            let m = g.mean_rows(o);
            let logits = g.concat_rows(&[o, m]);
            let loss = g.cross_entropy(logits, &[1, IGNORE_INDEX, 0, 1]).unwrap();
            (g, xn, loss)
        };
        let (g, xn, loss) = loss_of(&x0, true);
        let grads = g.backward(loss);
        let analytic = grads.get(xn).unwrap().clone();
        let numeric = finite_diff(
            &x0,
            |x| {
                let (g, _, l) = loss_of(x, false);
                g.scalar(l)
            },
            1e-6,
        );
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(array![[1.0, 2.0]], false);
        let b = g.leaf(array![[3.0], [4.0]], true);
        let c = g.matmul(a, b);
        let grads = g.backward(c);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0], [2.0]]);
    }

    #[test]
    fn causal_softmax_rows_are_distributions() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(array![[1.0, 5.0, 2.0], [0.5, 0.1, 9.0], [3.0, 3.0, 3.0]]);
        let p = g.softmax(a, true);
        let v = g.value(p);
        assert_eq!(v[[0, 0]], 1.0);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[1, 2]], 0.0);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_without_targets_is_none() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(array![[1.0, 2.0]]);
        assert!(g.cross_entropy(a, &[IGNORE_INDEX]).is_none());
    }

    #[test]
    fn scale_by_and_recip_gradients() {
        let x0 = array![[0.7]];
        let f = |s: &Array2<f64>, grad: bool| {
            let mut g = Graph::<f64>::new();
            let sn = g.leaf(s.clone(), grad);
            let r = g.recip(sn);
            let a = g.constant(array![[1.0, -2.0], [0.5, 0.3], [0.1, -1.0]]);
            let b = g.scale_by(a, r);
            let t = g.transpose(b);
            let l = g.cross_entropy(t, &[2, IGNORE_INDEX]).unwrap();
            (g, sn, l)
        };
        let (g, sn, l) = f(&x0, true);
        let an = g.backward(l).get(sn).unwrap().clone();
        let num = finite_diff(
            &x0,
            |s| {
                let (g, _, l) = f(s, false);
                g.scalar(l)
            },
            1e-6,
        );
        assert_close(&an, &num, 1e-6);
    }
}
