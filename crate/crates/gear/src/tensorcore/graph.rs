//! Reverse-mode automatic differentiation over a per-example tape.
//!
//! Every operation appends a node to the tape, so insertion order is already
//! a topological order. `backward` walks the tape once in reverse, computing
//! adjoints into a scratch buffer and then accumulating them into each node's
//! `grad` slot, so repeated backward calls add up (callers zero grads between
//! steps).
//!
//! The op set is exactly what the verifier needs: matrix products for the
//! attention MLPs and classifier, vector concatenation for pairwise features,
//! ReLU/tanh/softmax nonlinearities, elementwise max/mean pooling, scalar
//! weighted sums for attention mixing, and a clamped negative log for the
//! loss. No broadcasting.

use crate::error::{GearError, Result};
use crate::tensorcore::Matrix;

/// Input clamp for [`Graph::neg_ln`]; keeps the loss finite at probability 0.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Node, Node),
    Add(Node, Node),
    ConcatRows(Node, Node),
    Relu(Node),
    Tanh(Node),
    SoftmaxVec(Node),
    Max(Vec<Node>),
    Mean(Vec<Node>),
    /// Weighted sum of same-shape matrices with 1x1 scalar-node coefficients.
    ScaleAdd(Vec<(Node, Node)>),
    /// Single entry of a column vector as a 1x1 node.
    Entry(Node, usize),
    Sum(Node),
    NegLn(Node),
    /// Identity forward; multiplies the upstream gradient by a constant.
    GradScale(Node, f64),
}

#[derive(Debug)]
struct NodeData {
    value: Matrix,
    grad: Matrix,
    requires_grad: bool,
    op: Op,
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Node {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(NodeData {
            value,
            grad,
            requires_grad,
            op,
        });
        Node(self.nodes.len() - 1)
    }

    fn requires(&self, n: Node) -> bool {
        self.nodes[n.0].requires_grad
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Node {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf that accumulates gradients (a trainable parameter).
    pub fn param(&mut self, value: Matrix) -> Node {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, n: Node) -> &Matrix {
        &self.nodes[n.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, n: Node) -> f64 {
        debug_assert_eq!(self.nodes[n.0].value.shape(), (1, 1));
        self.nodes[n.0].value.get(0, 0)
    }

    pub fn grad(&self, n: Node) -> &Matrix {
        &self.nodes[n.0].grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    pub fn matmul(&mut self, a: Node, b: Node) -> Result<Node> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        let (ar, ac) = self.nodes[a.0].value.shape();
        let (br, bc) = self.nodes[b.0].value.shape();
        if (ar, ac) != (br, bc) {
            return Err(GearError::DimensionMismatch {
                op: "add",
                left_rows: ar,
                left_cols: ac,
                right_rows: br,
                right_cols: bc,
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        value.add_assign(&self.nodes[b.0].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    /// Stacks two column vectors. Either operand may be empty (0x1).
    pub fn concat_rows(&mut self, a: Node, b: Node) -> Result<Node> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        if !va.is_vector() || !vb.is_vector() {
            return Err(GearError::DimensionMismatch {
                op: "concat_rows",
                left_rows: va.rows(),
                left_cols: va.cols(),
                right_rows: vb.rows(),
                right_cols: vb.cols(),
            });
        }
        let mut data = Vec::with_capacity(va.rows() + vb.rows());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let value = Matrix::from_vec(data.len(), 1, data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::ConcatRows(a, b)))
    }

    /// Stacks any number of column vectors (or 1x1 scalars) into one vector.
    pub fn stack_rows(&mut self, parts: &[Node]) -> Result<Node> {
        let mut iter = parts.iter();
        let first = *iter.next().ok_or(GearError::EmptyAggregation {
            op: "stack_rows",
        })?;
        let mut acc = first;
        for &n in iter {
            acc = self.concat_rows(acc, n)?;
        }
        Ok(acc)
    }

    pub fn relu(&mut self, a: Node) -> Result<Node> {
        let value = self.nodes[a.0].value.map(|v| v.max(0.0));
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::Relu(a)))
    }

    pub fn tanh(&mut self, a: Node) -> Result<Node> {
        let value = self.nodes[a.0].value.map(f64::tanh);
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::Tanh(a)))
    }

    /// Softmax over the entries of a column vector, computed with
    /// max-subtraction so large logits cannot overflow.
    pub fn softmax_vec(&mut self, a: Node) -> Result<Node> {
        let v = &self.nodes[a.0].value;
        if !v.is_vector() || v.is_empty() {
            return Err(GearError::EmptyAggregation { op: "softmax_vec" });
        }
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let value = Matrix::from_vec(v.rows(), 1, exps.into_iter().map(|e| e / sum).collect())?;
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::SoftmaxVec(a)))
    }

    /// Elementwise maximum over same-shape nodes. On ties the first input
    /// receives the gradient.
    pub fn elementwise_max(&mut self, inputs: &[Node]) -> Result<Node> {
        self.check_pool(inputs, "elementwise_max")?;
        let mut value = self.nodes[inputs[0].0].value.clone();
        for &n in &inputs[1..] {
            let other = &self.nodes[n.0].value;
            for (dst, &src) in value.data_mut().iter_mut().zip(other.data()) {
                if src > *dst {
                    *dst = src;
                }
            }
        }
        let rg = inputs.iter().any(|&n| self.requires(n));
        Ok(self.push(value, rg, Op::Max(inputs.to_vec())))
    }

    /// Elementwise mean over same-shape nodes.
    pub fn elementwise_mean(&mut self, inputs: &[Node]) -> Result<Node> {
        self.check_pool(inputs, "elementwise_mean")?;
        let mut value = self.nodes[inputs[0].0].value.clone();
        for &n in &inputs[1..] {
            let other = self.nodes[n.0].value.clone();
            value.add_assign(&other)?;
        }
        value.scale_assign(1.0 / inputs.len() as f64);
        let rg = inputs.iter().any(|&n| self.requires(n));
        Ok(self.push(value, rg, Op::Mean(inputs.to_vec())))
    }

    fn check_pool(&self, inputs: &[Node], op: &'static str) -> Result<()> {
        let first = inputs.first().ok_or(GearError::EmptyAggregation { op })?;
        let shape = self.nodes[first.0].value.shape();
        for &n in &inputs[1..] {
            let other = self.nodes[n.0].value.shape();
            if other != shape {
                return Err(GearError::DimensionMismatch {
                    op,
                    left_rows: shape.0,
                    left_cols: shape.1,
                    right_rows: other.0,
                    right_cols: other.1,
                });
            }
        }
        Ok(())
    }

    /// Weighted sum `Σ s_k * m_k` where each `s_k` is a 1x1 node and all
    /// `m_k` share a shape. This is the differentiable attention mix.
    pub fn scale_add(&mut self, terms: &[(Node, Node)]) -> Result<Node> {
        let first = terms.first().ok_or(GearError::EmptyAggregation {
            op: "scale_add",
        })?;
        let shape = self.nodes[first.1 .0].value.shape();
        let mut value = Matrix::zeros(shape.0, shape.1);
        for &(s, m) in terms {
            let sv = &self.nodes[s.0].value;
            if sv.shape() != (1, 1) {
                return Err(GearError::DimensionMismatch {
                    op: "scale_add (scalar operand)",
                    left_rows: sv.rows(),
                    left_cols: sv.cols(),
                    right_rows: 1,
                    right_cols: 1,
                });
            }
            let mv = &self.nodes[m.0].value;
            if mv.shape() != shape {
                return Err(GearError::DimensionMismatch {
                    op: "scale_add",
                    left_rows: shape.0,
                    left_cols: shape.1,
                    right_rows: mv.rows(),
                    right_cols: mv.cols(),
                });
            }
            let s = sv.get(0, 0);
            for (dst, &src) in value.data_mut().iter_mut().zip(mv.data()) {
                *dst += s * src;
            }
        }
        let rg = terms
            .iter()
            .any(|&(s, m)| self.requires(s) || self.requires(m));
        Ok(self.push(value, rg, Op::ScaleAdd(terms.to_vec())))
    }

    /// Picks entry `index` of a column vector as a 1x1 node.
    pub fn entry(&mut self, a: Node, index: usize) -> Result<Node> {
        let v = &self.nodes[a.0].value;
        if !v.is_vector() || index >= v.rows() {
            return Err(GearError::Config(format!(
                "entry index {index} out of range for {}x{} vector",
                v.rows(),
                v.cols()
            )));
        }
        let value = Matrix::from_vec(1, 1, vec![v.get(index, 0)])?;
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::Entry(a, index)))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Node) -> Result<Node> {
        let total: f64 = self.nodes[a.0].value.data().iter().sum();
        let value = Matrix::from_vec(1, 1, vec![total])?;
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::Sum(a)))
    }

    /// Elementwise `-ln(max(x, LOG_CLAMP))`. Entries at or below the clamp
    /// get zero gradient.
    pub fn neg_ln(&mut self, a: Node) -> Result<Node> {
        let value = self.nodes[a.0].value.map(|v| -(v.max(LOG_CLAMP).ln()));
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::NegLn(a)))
    }

    /// Identity on values; multiplies the gradient flowing through by
    /// `factor`. `factor = -1` gives gradient reversal; other factors are
    /// mainly useful as negative controls for gradient checking.
    pub fn grad_scale(&mut self, a: Node, factor: f64) -> Result<Node> {
        let value = self.nodes[a.0].value.clone();
        let rg = self.requires(a);
        Ok(self.push(value, rg, Op::GradScale(a, factor)))
    }

    /// Accumulates `∂loss/∂node` into `grad` for every node that requires
    /// gradients. `loss` must be 1x1. Each call adds on top of existing
    /// grads; the walk is a single reverse pass over the tape.
    pub fn backward(&mut self, loss: Node) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(GearError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for idx in (0..self.nodes.len()).rev() {
            let Some(upstream) = adj[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.nodes[idx].grad.add_assign(&upstream)?;
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let bt = self.nodes[b.0].value.transpose();
                        let da = upstream.matmul(&bt)?;
                        accumulate(&mut adj[a.0], da)?;
                    }
                    if self.requires(b) {
                        let at = self.nodes[a.0].value.transpose();
                        let db = at.matmul(&upstream)?;
                        accumulate(&mut adj[b.0], db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        accumulate(&mut adj[a.0], upstream.clone())?;
                    }
                    if self.requires(b) {
                        accumulate(&mut adj[b.0], upstream.clone())?;
                    }
                }
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a.0].value.rows();
                    let nb = self.nodes[b.0].value.rows();
                    if self.requires(a) {
                        let da = Matrix::from_vec(na, 1, upstream.data()[..na].to_vec())?;
                        accumulate(&mut adj[a.0], da)?;
                    }
                    if self.requires(b) {
                        let db = Matrix::from_vec(nb, 1, upstream.data()[na..].to_vec())?;
                        accumulate(&mut adj[b.0], db)?;
                    }
                }
                Op::Relu(a) => {
                    if self.requires(a) {
                        let x = &self.nodes[a.0].value;
                        let mut da = upstream.clone();
                        for (g, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                            if xv <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::Tanh(a) => {
                    if self.requires(a) {
                        let y = &self.nodes[idx].value;
                        let mut da = upstream.clone();
                        for (g, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                            *g *= 1.0 - yv * yv;
                        }
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::SoftmaxVec(a) => {
                    if self.requires(a) {
                        let y = &self.nodes[idx].value;
                        let dot: f64 = y
                            .data()
                            .iter()
                            .zip(upstream.data())
                            .map(|(&yv, &gv)| yv * gv)
                            .sum();
                        let mut da = upstream.clone();
                        for (g, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                            *g = yv * (*g - dot);
                        }
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::Max(inputs) => {
                    let shape = self.nodes[idx].value.shape();
                    let n_entries = shape.0 * shape.1;
                    // Route each coordinate to the first argmax input.
                    let mut winner = vec![0usize; n_entries];
                    for e in 0..n_entries {
                        let mut best = f64::NEG_INFINITY;
                        for (k, &inp) in inputs.iter().enumerate() {
                            let v = self.nodes[inp.0].value.data()[e];
                            if v > best {
                                best = v;
                                winner[e] = k;
                            }
                        }
                    }
                    for (k, &inp) in inputs.iter().enumerate() {
                        if !self.requires(inp) {
                            continue;
                        }
                        let mut da = Matrix::zeros(shape.0, shape.1);
                        let mut any = false;
                        for e in 0..n_entries {
                            if winner[e] == k {
                                da.data_mut()[e] = upstream.data()[e];
                                any = true;
                            }
                        }
                        if any {
                            accumulate(&mut adj[inp.0], da)?;
                        }
                    }
                }
                Op::Mean(inputs) => {
                    let mut da = upstream.clone();
                    da.scale_assign(1.0 / inputs.len() as f64);
                    for &inp in &inputs {
                        if self.requires(inp) {
                            accumulate(&mut adj[inp.0], da.clone())?;
                        }
                    }
                }
                Op::ScaleAdd(terms) => {
                    for &(s, m) in &terms {
                        if self.requires(s) {
                            let dot: f64 = upstream
                                .data()
                                .iter()
                                .zip(self.nodes[m.0].value.data())
                                .map(|(&g, &v)| g * v)
                                .sum();
                            accumulate(&mut adj[s.0], Matrix::from_vec(1, 1, vec![dot])?)?;
                        }
                        if self.requires(m) {
                            let sv = self.nodes[s.0].value.get(0, 0);
                            let mut dm = upstream.clone();
                            dm.scale_assign(sv);
                            accumulate(&mut adj[m.0], dm)?;
                        }
                    }
                }
                Op::Entry(a, index) => {
                    if self.requires(a) {
                        let rows = self.nodes[a.0].value.rows();
                        let mut da = Matrix::zeros(rows, 1);
                        da.data_mut()[index] = upstream.get(0, 0);
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::Sum(a) => {
                    if self.requires(a) {
                        let (r, c) = self.nodes[a.0].value.shape();
                        let mut da = Matrix::zeros(r, c);
                        da.fill(upstream.get(0, 0));
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::NegLn(a) => {
                    if self.requires(a) {
                        let x = &self.nodes[a.0].value;
                        let mut da = upstream.clone();
                        for (g, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                            *g = if xv > LOG_CLAMP { -*g / xv } else { 0.0 };
                        }
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
                Op::GradScale(a, factor) => {
                    if self.requires(a) {
                        let mut da = upstream.clone();
                        da.scale_assign(factor);
                        accumulate(&mut adj[a.0], da)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&delta),
        None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}
