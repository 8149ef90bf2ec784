//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op is evaluated eagerly when it is added, and the node list is the
//! topological order. [`Graph::evaluate`] replays the whole tape with new leaf
//! values, which is what finite-difference checks use.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Slope of the negative half of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Variance floor of the layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    LeakyRelu { a: NodeId },
    Exp { a: NodeId },
    SoftmaxRows { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
    SqErr { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, end: usize },
    LayerNorm { a: NodeId },
    Reshape { a: NodeId, shape: Vec<usize> },
    PairwiseSqDist { a: NodeId, b: NodeId },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. }
            | Add { a, b }
            | Sub { a, b }
            | Mul { a, b }
            | SqErr { a, b }
            | PairwiseSqDist { a, b } => vec![*a, *b],
            Scale { a, .. }
            | LeakyRelu { a }
            | Exp { a }
            | SoftmaxRows { a }
            | Sum { a }
            | Mean { a }
            | Slice { a, .. }
            | LayerNorm { a }
            | Reshape { a, .. } => vec![*a],
            Concat { parts, .. } => parts.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Op-specific cache (per-row inverse std for layer norm).
    aux: Vec<f64>,
    trainable: bool,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the trainable leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for frozen leaves and interior nodes; zeros for trainable
    /// leaves the loss does not depend on.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn shape_err(node: usize, msg: impl Into<String>) -> Error {
    Error::Shape {
        node,
        msg: msg.into(),
    }
}

/// Row broadcasting: `b` either matches `a` or is a single row of `a`'s width.
fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() || (a.shape().len() == 2 && b.len() == a.cols() && b.rows() == 1)
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let out: Vec<f64> = if a.len() == b.len() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let w = b.len();
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % w]))
            .collect()
    };
    Tensor::new(a.shape(), out)
}

/// Reduce a gradient of `a`'s shape down to `b`'s (undo row broadcast).
fn unbroadcast(g: Tensor, b_shape: &[usize]) -> Tensor {
    let n: usize = b_shape.iter().product();
    if g.len() == n {
        return g.reshaped(b_shape);
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(b_shape, out)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    /// Trainable leaves, in creation order.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(NodeId)
            .collect()
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            aux: Vec::new(),
            trainable,
            needs_grad: trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// Frozen leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let idx = self.nodes.len();
        let (value, aux) = self.compute(idx, &op)?;
        if !value.is_finite() {
            return Err(Error::NumericalBlowUp { node: idx });
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            aux,
            trainable: false,
            needs_grad,
        });
        Ok(NodeId(idx))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul {
            a,
            b,
            ta: false,
            tb: false,
        })
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul {
            a,
            b,
            ta: false,
            tb: true,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale { a, c })
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LeakyRelu { a })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp { a })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows { a })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum { a })
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean { a })
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn sq_err(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::SqErr { a, b })
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.push(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.push(Op::Slice {
            a,
            axis,
            start,
            end,
        })
    }

    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LayerNorm { a })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape {
            a,
            shape: shape.to_vec(),
        })
    }

    /// `[n, d] × [m, d] → [n, m]` matrix of squared Euclidean distances.
    pub fn pairwise_sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::PairwiseSqDist { a, b })
    }

    fn compute(&self, idx: usize, op: &Op) -> Result<(Tensor, Vec<f64>)> {
        let v = |id: &NodeId| -> Result<&Tensor> {
            self.nodes
                .get(id.0)
                .filter(|_| id.0 < idx)
                .map(|n| &n.value)
                .ok_or_else(|| shape_err(idx, format!("input {} is not an earlier node", id.0)))
        };
        let none = Vec::new;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            Op::MatMul { a, b, ta, tb } => {
                let (a, b) = (v(a)?, v(b)?);
                if a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(shape_err(idx, "matmul needs 2-d operands"));
                }
                let (ar, ac) = (a.shape()[0], a.shape()[1]);
                let (br, bc) = (b.shape()[0], b.shape()[1]);
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let (k2, n) = if *tb { (bc, br) } else { (br, bc) };
                if k != k2 {
                    return Err(shape_err(
                        idx,
                        format!("matmul {:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(a.data(), ar, ac, *ta, b.data(), br, bc, *tb, &mut out, 0.0);
                (Tensor::new(&[m, n], out), none())
            }
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                let (a, b) = (v(a)?, v(b)?);
                if !broadcast_ok(a, b) {
                    return Err(shape_err(
                        idx,
                        format!("elementwise {:?} with {:?}", a.shape(), b.shape()),
                    ));
                }
                let t = match op {
                    Op::Add { .. } => zip_broadcast(a, b, |x, y| x + y),
                    Op::Sub { .. } => zip_broadcast(a, b, |x, y| x - y),
                    _ => zip_broadcast(a, b, |x, y| x * y),
                };
                (t, none())
            }
            Op::Scale { a, c } => (v(a)?.scale(*c), none()),
            Op::LeakyRelu { a } => (
                v(a)?.map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x }),
                none(),
            ),
            Op::Exp { a } => (v(a)?.map(f64::exp), none()),
            Op::SoftmaxRows { a } => {
                let a = v(a)?;
                let c = a.cols();
                if c == 0 {
                    return Err(shape_err(idx, "softmax over empty rows"));
                }
                let mut out = a.data().to_vec();
                for row in out.chunks_mut(c) {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - mx).exp();
                        s += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= s;
                    }
                }
                (Tensor::new(a.shape(), out), none())
            }
            Op::Sum { a } => (Tensor::scalar(v(a)?.sum()), none()),
            Op::Mean { a } => {
                let a = v(a)?;
                if a.is_empty() {
                    return Err(shape_err(idx, "mean of empty tensor"));
                }
                (Tensor::scalar(a.sum() / a.len() as f64), none())
            }
            Op::SqErr { a, b } => {
                let (a, b) = (v(a)?, v(b)?);
                if a.len() != b.len() {
                    return Err(shape_err(
                        idx,
                        format!("squared error {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                let s = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (Tensor::scalar(s), none())
            }
            Op::Concat { parts, axis } => {
                let ts: Vec<&Tensor> = parts.iter().map(v).collect::<Result<_>>()?;
                if ts.is_empty() || ts.iter().any(|t| t.shape().len() != 2) || *axis > 1 {
                    return Err(shape_err(idx, "concat needs 2-d parts along axis 0 or 1"));
                }
                if *axis == 1 {
                    let r = ts[0].rows();
                    if ts.iter().any(|t| t.rows() != r) {
                        return Err(shape_err(idx, "concat: row counts differ"));
                    }
                    let width: usize = ts.iter().map(|t| t.cols()).sum();
                    let mut out = Vec::with_capacity(r * width);
                    for i in 0..r {
                        for t in &ts {
                            out.extend_from_slice(t.row_slice(i));
                        }
                    }
                    (Tensor::new(&[r, width], out), none())
                } else {
                    let c = ts[0].cols();
                    if ts.iter().any(|t| t.cols() != c) {
                        return Err(shape_err(idx, "concat: column counts differ"));
                    }
                    let rows: usize = ts.iter().map(|t| t.rows()).sum();
                    let mut out = Vec::with_capacity(rows * c);
                    for t in &ts {
                        out.extend_from_slice(t.data());
                    }
                    (Tensor::new(&[rows, c], out), none())
                }
            }
            Op::Slice {
                a,
                axis,
                start,
                end,
            } => {
                let a = v(a)?;
                if a.shape().len() != 2 || *axis > 1 || start > end {
                    return Err(shape_err(idx, "slice needs a 2-d input and ordered range"));
                }
                let (r, c) = (a.rows(), a.cols());
                if *axis == 0 {
                    if *end > r {
                        return Err(shape_err(idx, "row slice out of range"));
                    }
                    (a.slice_rows(*start, *end), none())
                } else {
                    if *end > c {
                        return Err(shape_err(idx, "column slice out of range"));
                    }
                    let w = end - start;
                    let mut out = Vec::with_capacity(r * w);
                    for i in 0..r {
                        out.extend_from_slice(&a.row_slice(i)[*start..*end]);
                    }
                    (Tensor::new(&[r, w], out), none())
                }
            }
            Op::LayerNorm { a } => {
                let a = v(a)?;
                let c = a.cols();
                if c == 0 {
                    return Err(shape_err(idx, "layer norm over empty rows"));
                }
                let mut out = a.data().to_vec();
                let mut inv = Vec::with_capacity(a.rows());
                for row in out.chunks_mut(c) {
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    for x in row.iter_mut() {
                        *x = (*x - mean) * is;
                    }
                    inv.push(is);
                }
                (Tensor::new(a.shape(), out), inv)
            }
            Op::Reshape { a, shape } => {
                let a = v(a)?;
                if shape.iter().product::<usize>() != a.len() {
                    return Err(shape_err(
                        idx,
                        format!("reshape {:?} to {:?}", a.shape(), shape),
                    ));
                }
                (a.clone().reshaped(shape), none())
            }
            Op::PairwiseSqDist { a, b } => {
                let (a, b) = (v(a)?, v(b)?);
                if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
                    return Err(shape_err(
                        idx,
                        format!("pairwise distance {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                let (n, m) = (a.rows(), b.rows());
                let mut out = Vec::with_capacity(n * m);
                for i in 0..n {
                    let ai = a.row_slice(i);
                    for j in 0..m {
                        let bj = b.row_slice(j);
                        out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
                    }
                }
                (Tensor::new(&[n, m], out), none())
            }
        })
    }

    /// Replace leaf values and recompute every downstream node.
    pub fn evaluate(&mut self, feeds: &[(NodeId, Tensor)]) -> Result<()> {
        for (id, t) in feeds {
            let node = self
                .nodes
                .get_mut(id.0)
                .ok_or_else(|| shape_err(id.0, "no such node"))?;
            if !matches!(node.op, Op::Leaf) {
                return Err(shape_err(id.0, "only leaves can be fed"));
            }
            if node.value.shape() != t.shape() {
                return Err(shape_err(
                    id.0,
                    format!("feed {:?} for leaf {:?}", t.shape(), node.value.shape()),
                ));
            }
            node.value = t.clone();
        }
        for idx in 0..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let (value, aux) = self.compute(idx, &op)?;
            if !value.is_finite() {
                return Err(Error::NumericalBlowUp { node: idx });
            }
            self.nodes[idx].value = value;
            self.nodes[idx].aux = aux;
        }
        Ok(())
    }

    /// Reverse-mode gradients of the scalar `loss` for every trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err(loss.0, "backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (i, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[i].trainable {
                *slot = None;
            } else if slot.is_none() {
                *slot = Some(Tensor::zeros(self.nodes[i].value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, t: Tensor| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let node = &self.nodes[idx];
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let (ar, ac) = (av.shape()[0], av.shape()[1]);
                let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                let (gr, gc) = (g.shape()[0], g.shape()[1]);
                if self.needs(*a) {
                    // C = op(A) op(B):  dA = G op(B)^T, stored transposed if ta.
                    let mut out = vec![0.0; ar * ac];
                    if !*ta {
                        gemm(g.data(), gr, gc, false, bv.data(), br, bc, !*tb, &mut out, 0.0);
                    } else {
                        gemm(bv.data(), br, bc, *tb, g.data(), gr, gc, true, &mut out, 0.0);
                    }
                    acc(grads, *a, Tensor::new(av.shape(), out));
                }
                if self.needs(*b) {
                    let mut out = vec![0.0; br * bc];
                    if !*tb {
                        gemm(av.data(), ar, ac, !*ta, g.data(), gr, gc, false, &mut out, 0.0);
                    } else {
                        gemm(g.data(), gr, gc, true, av.data(), ar, ac, *ta, &mut out, 0.0);
                    }
                    acc(grads, *b, Tensor::new(bv.shape(), out));
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let gb = if matches!(node.op, Op::Sub { .. }) {
                        g.scale(-1.0)
                    } else {
                        g.clone()
                    };
                    acc(grads, *b, unbroadcast(gb, val(*b).shape()));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if self.needs(*a) {
                    acc(grads, *a, zip_broadcast(g, bv, |x, y| x * y));
                }
                if self.needs(*b) {
                    let ga = Tensor::new(
                        g.shape(),
                        g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                    );
                    acc(grads, *b, unbroadcast(ga, bv.shape()));
                }
            }
            Op::Scale { a, c } => acc(grads, *a, g.scale(*c)),
            Op::LeakyRelu { a } => {
                let av = val(*a);
                let out = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gi, &x)| if x > 0.0 { *gi } else { LEAKY_SLOPE * gi })
                    .collect();
                acc(grads, *a, Tensor::new(av.shape(), out));
            }
            Op::Exp { a } => {
                let out = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gi, y)| gi * y)
                    .collect();
                acc(grads, *a, Tensor::new(g.shape(), out));
            }
            Op::SoftmaxRows { a } => {
                let c = node.value.cols();
                let mut out = Vec::with_capacity(g.len());
                for (gr, yr) in g.data().chunks(c).zip(node.value.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    out.extend(gr.iter().zip(yr).map(|(x, y)| y * (x - dot)));
                }
                acc(grads, *a, Tensor::new(g.shape(), out));
            }
            Op::Sum { a } => {
                acc(grads, *a, Tensor::full(val(*a).shape(), g.item()));
            }
            Op::Mean { a } => {
                let n = val(*a).len() as f64;
                acc(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::SqErr { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let s = 2.0 * g.item();
                if self.needs(*a) {
                    let out = av.data().iter().zip(bv.data()).map(|(x, y)| s * (x - y)).collect();
                    acc(grads, *a, Tensor::new(av.shape(), out));
                }
                if self.needs(*b) {
                    let out = av.data().iter().zip(bv.data()).map(|(x, y)| s * (y - x)).collect();
                    acc(grads, *b, Tensor::new(bv.shape(), out));
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    if *axis == 1 {
                        let w = pv.cols();
                        if self.needs(*p) {
                            let mut out = Vec::with_capacity(pv.len());
                            for i in 0..pv.rows() {
                                out.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                            }
                            acc(grads, *p, Tensor::new(pv.shape(), out));
                        }
                        offset += w;
                    } else {
                        let n = pv.len();
                        if self.needs(*p) {
                            let out = g.data()[offset..offset + n].to_vec();
                            acc(grads, *p, Tensor::new(pv.shape(), out));
                        }
                        offset += n;
                    }
                }
            }
            Op::Slice {
                a,
                axis,
                start,
                end,
            } => {
                let av = val(*a);
                let mut out = Tensor::zeros(av.shape());
                let c = av.cols();
                if *axis == 0 {
                    out.data_mut()[start * c..end * c].copy_from_slice(g.data());
                } else {
                    let w = end - start;
                    for i in 0..av.rows() {
                        out.data_mut()[i * c + start..i * c + end]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                }
                acc(grads, *a, out);
            }
            Op::LayerNorm { a } => {
                let c = node.value.cols();
                let mut out = Vec::with_capacity(g.len());
                for ((gr, yr), is) in g
                    .data()
                    .chunks(c)
                    .zip(node.value.data().chunks(c))
                    .zip(&node.aux)
                {
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>() / c as f64;
                    out.extend(gr.iter().zip(yr).map(|(x, y)| is * (x - mg - y * mgy)));
                }
                acc(grads, *a, Tensor::new(g.shape(), out));
            }
            Op::Reshape { a, .. } => {
                acc(grads, *a, g.clone().reshaped(val(*a).shape()));
            }
            Op::PairwiseSqDist { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (n, m, d) = (av.rows(), bv.rows(), av.cols());
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..n {
                    let ai = av.row_slice(i);
                    for j in 0..m {
                        let w = 2.0 * g.data()[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        let bj = bv.row_slice(j);
                        for k in 0..d {
                            let diff = w * (ai[k] - bj[k]);
                            ga[i * d + k] += diff;
                            gb[j * d + k] -= diff;
                        }
                    }
                }
                if self.needs(*a) {
                    acc(grads, *a, Tensor::new(av.shape(), ga));
                }
                if self.needs(*b) {
                    acc(grads, *b, Tensor::new(bv.shape(), gb));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let b = g.constant(Tensor::new(&[3, 2], vec![1., 0., 0., 1., 0., 0.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 4., 5.]);
        let b2 = g.constant(Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let d = g.matmul(a, b2).unwrap();
        // [1 2 3]·cols: (1+6+15, 2+8+18), (4+15+30, 8+20+36)
        assert_eq!(g.value(d).data(), &[22., 28., 49., 64.]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[1, 7], 3.25));
        let s = g.softmax_rows(a).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![-1.0, 2.0]));
        let r = g.leaky_relu(a).unwrap();
        assert_eq!(g.value(r).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        let ww = g.mul(w, w).unwrap();
        let l = g.sum(ww).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        let u = g.param(Tensor::row(vec![5.0]));
        let l = g.sum(w).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(u).unwrap().data(), &[0.0]);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        let c = g.constant(Tensor::row(vec![3.0, 4.0]));
        let p = g.mul(w, c).unwrap();
        let l = g.sum(p).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { node, .. }) => assert_eq!(node, 2),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn blow_up_detected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![1000.0]));
        assert!(matches!(g.exp(a), Err(Error::NumericalBlowUp { node: 1 })));
    }

    #[test]
    fn row_broadcast_add_and_backward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let b = g.param(Tensor::new(&[2], vec![10., 20.]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 22., 13., 24., 15., 26.]);
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[3., 3.]);
    }

    #[test]
    fn evaluate_replays_with_new_feed() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(vec![1.0, 2.0]));
        let ww = g.mul(w, w).unwrap();
        let l = g.sum(ww).unwrap();
        g.evaluate(&[(w, Tensor::row(vec![3.0, 4.0]))]).unwrap();
        assert_eq!(g.value(l).item(), 25.0);
    }
}
