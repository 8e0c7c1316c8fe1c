//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it in reverse. Values are computed
//! eagerly when a node is recorded.

use crate::error::{Error, Result};
use crate::ndcore::tensor::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    SoftmaxT(NodeId, f64),
    LogSoftmaxT(NodeId, f64),
    LogSumExpRows(NodeId),
    SelectColumns(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    PickPerRow(NodeId, Vec<usize>),
    RepeatRows(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A recorded computation. Leaves are either trainable parameters or
/// constants; gradients are only reported for trainable leaves, and nothing
/// flows through a constant.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: one gradient per node that the root
/// depends on.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros of `shape` when the root does not depend
    /// on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// Stop-gradient: a constant carrying the current value of `id`.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(a).scale(k)?;
        Ok(self.push(Op::Scale(a, k), v))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(a).add_scalar(k)?;
        Ok(self.push(Op::AddScalar(a), v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).relu()?;
        Ok(self.push(Op::Relu(a), v))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sigmoid()?;
        Ok(self.push(Op::Sigmoid(a), v))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).softplus()?;
        Ok(self.push(Op::Softplus(a), v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).exp()?;
        Ok(self.push(Op::Exp(a), v))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).ln()?;
        Ok(self.push(Op::Log(a), v))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).square()?;
        Ok(self.push(Op::Square(a), v))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let v = self.value(a).clamp(lo, hi)?;
        Ok(self.push(Op::Clamp(a, lo, hi), v))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sum()?;
        Ok(self.push(Op::Sum(a), v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).mean()?;
        Ok(self.push(Op::Mean(a), v))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sum_rows()?;
        Ok(self.push(Op::SumRows(a), v))
    }

    pub fn softmax_with_temperature(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        let v = self.value(a).softmax_t(temperature)?;
        Ok(self.push(Op::SoftmaxT(a, temperature), v))
    }

    pub fn log_softmax_with_temperature(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        let v = self.value(a).log_softmax_t(temperature)?;
        Ok(self.push(Op::LogSoftmaxT(a, temperature), v))
    }

    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).logsumexp_rows()?;
        Ok(self.push(Op::LogSumExpRows(a), v))
    }

    pub fn select_columns(&mut self, a: NodeId, columns: &[usize]) -> Result<NodeId> {
        let v = self.value(a).select_columns(columns)?;
        Ok(self.push(Op::SelectColumns(a, columns.to_vec()), v))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let v = self.value(a).gather_rows(rows)?;
        Ok(self.push(Op::GatherRows(a, rows.to_vec()), v))
    }

    pub fn pick_per_row(&mut self, a: NodeId, index: &[usize]) -> Result<NodeId> {
        let v = self.value(a).pick_per_row(index)?;
        Ok(self.push(Op::PickPerRow(a, index.to_vec()), v))
    }

    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let v = self.value(a).repeat_rows(n)?;
        Ok(self.push(Op::RepeatRows(a), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// `x + repeat_rows(bias)`, the affine-layer bias add.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let rows = self.value(x).rows();
        let b = self.repeat_rows(bias, rows)?;
        self.add(x, b)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (grad, node) in grads.iter_mut().zip(&self.nodes) {
            if matches!(node.op, Op::Leaf { trainable: false }) {
                *grad = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()?)?;
                let gb = val(*a).transpose()?.matmul(g)?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, reduce_to(g, val(*a))?)?;
                accumulate(grads, *b, reduce_to(g, val(*b))?)?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, reduce_to(g, val(*a))?)?;
                accumulate(grads, *b, reduce_to(&g.scale(-1.0)?, val(*b))?)?;
            }
            Op::Mul(a, b) => {
                let ga = g.mul(val(*b))?;
                let gb = g.mul(val(*a))?;
                accumulate(grads, *a, reduce_to(&ga, val(*a))?)?;
                accumulate(grads, *b, reduce_to(&gb, val(*b))?)?;
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.scale(*k)?)?,
            Op::AddScalar(a) => accumulate(grads, *a, g.clone())?,
            Op::Relu(a) => {
                let mask = val(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, *a, g.mul(&mask)?)?;
            }
            Op::Sigmoid(a) => {
                let d = node.value.map(|s| s * (1.0 - s));
                accumulate(grads, *a, g.mul(&d)?)?;
            }
            Op::Softplus(a) => {
                let d = val(*a).map(sigmoid);
                accumulate(grads, *a, g.mul(&d)?)?;
            }
            Op::Exp(a) => accumulate(grads, *a, g.mul(&node.value)?)?,
            Op::Log(a) => {
                let d = val(*a).map(|v| 1.0 / v);
                accumulate(grads, *a, g.mul(&d)?)?;
            }
            Op::Square(a) => {
                let d = val(*a).scale(2.0)?;
                accumulate(grads, *a, g.mul(&d)?)?;
            }
            Op::Clamp(a, lo, hi) => {
                let mask = val(*a).map(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
                accumulate(grads, *a, g.mul(&mask)?)?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                accumulate(grads, *a, Tensor::full(val(*a).shape(), s))?;
            }
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                let s = g.item()? / n;
                accumulate(grads, *a, Tensor::full(val(*a).shape(), s))?;
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).dims2()?;
                let mut out = Vec::with_capacity(r * c);
                for &gi in g.data() {
                    out.extend(std::iter::repeat_n(gi, c));
                }
                accumulate(grads, *a, Tensor::from_parts(val(*a).shape().to_vec(), out))?;
            }
            Op::SoftmaxT(a, t) => {
                // dx_j = s_j (g_j - sum_k g_k s_k) / T
                let s = &node.value;
                let (r, c) = s.dims2()?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let srow = s.row(i);
                    let grow = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[i * c + j] = srow[j] * (grow[j] - dot) / t;
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(s.shape().to_vec(), out))?;
            }
            Op::LogSoftmaxT(a, t) => {
                // dx_j = (g_j - softmax_j * sum_k g_k) / T
                let ls = &node.value;
                let (r, c) = ls.dims2()?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let lrow = ls.row(i);
                    let grow = &g.data()[i * c..(i + 1) * c];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..c {
                        out[i * c + j] = (grow[j] - lrow[j].exp() * gsum) / t;
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(ls.shape().to_vec(), out))?;
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let (r, c) = x.dims2()?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let lse = node.value.data()[i];
                    for j in 0..c {
                        out[i * c + j] = g.data()[i] * (x.get(i, j) - lse).exp();
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out))?;
            }
            Op::SelectColumns(a, cols) => {
                let x = val(*a);
                let (r, c) = x.dims2()?;
                let k = cols.len();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for (jj, &j) in cols.iter().enumerate() {
                        out[i * c + j] += g.data()[i * k + jj];
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out))?;
            }
            Op::GatherRows(a, rows) => {
                let x = val(*a);
                let (_, c) = x.dims2()?;
                let mut out = vec![0.0; x.numel()];
                for (ii, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        out[i * c + j] += g.data()[ii * c + j];
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out))?;
            }
            Op::PickPerRow(a, index) => {
                let x = val(*a);
                let (_, c) = x.dims2()?;
                let mut out = vec![0.0; x.numel()];
                for (i, &j) in index.iter().enumerate() {
                    out[i * c + j] = g.data()[i];
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out))?;
            }
            Op::RepeatRows(a) => {
                let x = val(*a);
                let c = x.numel();
                let mut out = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out))?;
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::Reshape(a) => accumulate(grads, *a, g.reshape(val(*a).shape())?)?,
        }
        Ok(())
    }
}

/// Sums a gradient back down to a scalar operand's shape.
fn reduce_to(g: &Tensor, operand: &Tensor) -> Result<Tensor> {
    if g.shape() == operand.shape() {
        Ok(g.clone())
    } else {
        g.sum()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}
