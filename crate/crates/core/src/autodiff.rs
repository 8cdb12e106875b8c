//! Define-by-run reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is applied. Node values are
//! computed eagerly, [`Graph::forward`] re-evaluates the recorded program
//! (after a leaf has been changed with [`Graph::set_value`]) and
//! [`Graph::backward`] propagates the gradient of a scalar node back to
//! every node it depends on.
//!
//! Binary element-wise ops ([`Graph::add`], [`Graph::hadamard`]) broadcast
//! along an axis whose extent is 1, so a `1 x n` bias or gate row applies to
//! every row of a `b x n` batch and an `n x 1` column applies to every column.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clip applied to predictions inside the BCE loss.
pub const BCE_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Hadamard,
    SoftmaxRows,
    Sigmoid,
    Relu,
    Mean,
    BceLoss,
    MseLoss,
    Scale,
    Sum,
    Ln,
    Abs,
    Transpose,
    SelectRow,
    ConcatRows,
    MeanRows,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Mean(NodeId),
    BceLoss(NodeId, NodeId),
    MseLoss(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Transpose(NodeId),
    SelectRow(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    MeanRows(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Mean(_) => OpKind::Mean,
            Op::BceLoss(..) => OpKind::BceLoss,
            Op::MseLoss(..) => OpKind::MseLoss,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Ln(_) => OpKind::Ln,
            Op::Abs(_) => OpKind::Abs,
            Op::Transpose(_) => OpKind::Transpose,
            Op::SelectRow(..) => OpKind::SelectRow,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::MeanRows(_) => OpKind::MeanRows,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar node with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `id` does not influence the differentiated node.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for disconnected nodes.
    pub fn get_or_zeros(&self, graph: &Graph, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = graph.value(id).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let axis = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (axis(a.0, b.0), axis(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::dim(
            op,
            format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1),
        )),
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, out: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = out;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if a.rows() == 1 { 0 } else { r };
        let rb = if b.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            let ca = if a.cols() == 1 { 0 } else { c };
            let cb = if b.cols() == 1 { 0 } else { c };
            data.push(f(a.get(ra, ca), b.get(rb, cb)));
        }
    }
    Tensor::new(rows, cols, data).expect("broadcast shape")
}

/// Sums `grad` down to `shape` along broadcast axes.
fn reduce_to(grad: &Tensor, shape: (usize, usize)) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..grad.rows() {
        let ro = if shape.0 == 1 { 0 } else { r };
        for c in 0..grad.cols() {
            let co = if shape.1 == 1 { 0 } else { c };
            let v = out.get(ro, co) + grad.get(r, c);
            out.set(ro, co, v);
        }
    }
    out
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(BCE_CLIP, 1.0 - BCE_CLIP)
}

fn bce_term(p: f64, t: f64) -> f64 {
    let p = clip_prob(p);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!(
                "{}x{} against {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    Ok(())
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

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Adds an input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Replaces a leaf value. Call [`Graph::forward`] afterwards to refresh
    /// dependent nodes.
    pub fn set_value(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract("only leaves can be assigned".into()));
        }
        same_shape("set_value", &node.value, &value)?;
        node.value = value;
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op)?;
        if !value.all_finite() {
            return Err(Error::Numeric {
                op: kind_name(op.kind()),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Hadamard(a, b))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    /// Mean over all entries, as a `1 x 1` node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Sum over all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    /// Mean binary cross-entropy; predictions are clipped to
    /// `[BCE_CLIP, 1 - BCE_CLIP]`.
    pub fn bce_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.push(Op::BceLoss(pred, target))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.push(Op::MseLoss(pred, target))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Ln(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    /// Row `row` of `a` as a `1 x cols` node.
    pub fn select_row(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        self.push(Op::SelectRow(a, row))
    }

    /// Stacks equally wide nodes vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    /// Column means, as a `1 x cols` node.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MeanRows(a))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::Add(a, b) => {
                let shape = broadcast_shape("add", v(a).shape(), v(b).shape())?;
                broadcast_zip(v(a), v(b), shape, |x, y| x + y)
            }
            Op::Hadamard(a, b) => {
                let shape = broadcast_shape("hadamard", v(a).shape(), v(b).shape())?;
                broadcast_zip(v(a), v(b), shape, |x, y| x * y)
            }
            Op::SoftmaxRows(a) => softmax_rows(v(a)),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Mean(a) => {
                let t = v(a);
                if t.is_empty() {
                    return Err(Error::dim("mean", "empty input"));
                }
                Tensor::scalar(t.sum() / t.len() as f64)
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::BceLoss(p, t) => {
                let (p, t) = (v(p), v(t));
                same_shape("bce_loss", p, t)?;
                if p.is_empty() {
                    return Err(Error::dim("bce_loss", "empty input"));
                }
                let total: f64 = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&p, &t)| bce_term(p, t))
                    .sum();
                Tensor::scalar(total / p.len() as f64)
            }
            Op::MseLoss(p, t) => {
                let (p, t) = (v(p), v(t));
                same_shape("mse_loss", p, t)?;
                if p.is_empty() {
                    return Err(Error::dim("mse_loss", "empty input"));
                }
                let total: f64 = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum();
                Tensor::scalar(total / p.len() as f64)
            }
            Op::Scale(a, f) => v(a).map(|x| x * f),
            Op::Ln(a) => v(a).map(f64::ln),
            Op::Abs(a) => v(a).map(f64::abs),
            Op::Transpose(a) => v(a).transpose(),
            Op::SelectRow(a, r) => {
                let t = v(a);
                if *r >= t.rows() {
                    return Err(Error::dim(
                        "select_row",
                        format!("row {r} of a {}-row input", t.rows()),
                    ));
                }
                Tensor::row_vector(t.row(*r))
            }
            Op::ConcatRows(parts) => {
                let Some(first) = parts.first() else {
                    return Err(Error::dim("concat_rows", "no inputs"));
                };
                let cols = v(first).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = v(p);
                    if t.cols() != cols {
                        return Err(Error::dim(
                            "concat_rows",
                            format!("width {} among width {cols}", t.cols()),
                        ));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, cols, data)?
            }
            Op::MeanRows(a) => {
                let t = v(a);
                if t.rows() == 0 {
                    return Err(Error::dim("mean_rows", "empty input"));
                }
                let mut out = vec![0.0; t.cols()];
                for r in 0..t.rows() {
                    for (o, x) in out.iter_mut().zip(t.row(r)) {
                        *o += x;
                    }
                }
                let n = t.rows() as f64;
                out.iter_mut().for_each(|o| *o /= n);
                Tensor::row_vector(&out)
            }
        })
    }

    /// Re-evaluates every non-leaf node in recording order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(&op)?;
            if !value.all_finite() {
                return Err(Error::Numeric {
                    op: kind_name(op.kind()),
                });
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Gradient of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, found {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut contribs: Vec<(NodeId, Tensor)> = Vec::new();
            let v = |id: &NodeId| &self.nodes[id.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    contribs.push((*a, g.matmul(&v(b).transpose())?));
                    contribs.push((*b, v(a).transpose().matmul(&g)?));
                }
                Op::Add(a, b) => {
                    contribs.push((*a, reduce_to(&g, v(a).shape())));
                    contribs.push((*b, reduce_to(&g, v(b).shape())));
                }
                Op::Hadamard(a, b) => {
                    let ga = broadcast_zip(&g, v(b), g.shape(), |x, y| x * y);
                    let gb = broadcast_zip(&g, v(a), g.shape(), |x, y| x * y);
                    contribs.push((*a, reduce_to(&ga, v(a).shape())));
                    contribs.push((*b, reduce_to(&gb, v(b).shape())));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut out = Tensor::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let dot: f64 = (0..cols).map(|c| g.get(r, c) * y.get(r, c)).sum();
                        for c in 0..cols {
                            out.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    contribs.push((*a, out));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    contribs.push((*a, broadcast_zip(&g, y, g.shape(), |g, y| g * y * (1.0 - y))));
                }
                Op::Relu(a) => {
                    contribs.push((
                        *a,
                        broadcast_zip(&g, v(a), g.shape(), |g, x| if x > 0.0 { g } else { 0.0 }),
                    ));
                }
                Op::Mean(a) => {
                    let (r, c) = v(a).shape();
                    let scale = g.data()[0] / (r * c) as f64;
                    contribs.push((*a, Tensor::filled(r, c, scale)));
                }
                Op::Sum(a) => {
                    let (r, c) = v(a).shape();
                    contribs.push((*a, Tensor::filled(r, c, g.data()[0])));
                }
                Op::BceLoss(p, t) => {
                    let (pv, tv) = (v(p), v(t));
                    let n = pv.len() as f64;
                    let g0 = g.data()[0];
                    let gp = broadcast_zip(pv, tv, pv.shape(), |p, t| {
                        if !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
                            0.0
                        } else {
                            g0 * (p - t) / (p * (1.0 - p)) / n
                        }
                    });
                    let gt = pv.map(|p| {
                        let p = clip_prob(p);
                        g0 * ((1.0 - p).ln() - p.ln()) / n
                    });
                    contribs.push((*p, gp));
                    contribs.push((*t, gt));
                }
                Op::MseLoss(p, t) => {
                    let (pv, tv) = (v(p), v(t));
                    let n = pv.len() as f64;
                    let g0 = g.data()[0];
                    let gp = broadcast_zip(pv, tv, pv.shape(), |p, t| g0 * 2.0 * (p - t) / n);
                    contribs.push((*t, gp.map(|x| -x)));
                    contribs.push((*p, gp));
                }
                Op::Scale(a, f) => contribs.push((*a, g.map(|x| x * f))),
                Op::Ln(a) => {
                    contribs.push((*a, broadcast_zip(&g, v(a), g.shape(), |g, x| g / x)));
                }
                Op::Abs(a) => {
                    contribs.push((
                        *a,
                        broadcast_zip(&g, v(a), g.shape(), |g, x| g * x.signum() * (x != 0.0) as u8 as f64),
                    ));
                }
                Op::Transpose(a) => contribs.push((*a, g.transpose())),
                Op::SelectRow(a, row) => {
                    let (r, c) = v(a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for col in 0..c {
                        out.set(*row, col, g.get(0, col));
                    }
                    contribs.push((*a, out));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = v(p).rows();
                        let idx: Vec<usize> = (offset..offset + rows).collect();
                        contribs.push((*p, g.select_rows(&idx)));
                        offset += rows;
                    }
                }
                Op::MeanRows(a) => {
                    let (r, c) = v(a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for row in 0..r {
                        for col in 0..c {
                            out.set(row, col, g.get(0, col) / r as f64);
                        }
                    }
                    contribs.push((*a, out));
                }
            }
            for (id, contrib) in contribs {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (x, y) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *x += y;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Hadamard => "hadamard",
        OpKind::SoftmaxRows => "softmax-rows",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Relu => "relu",
        OpKind::Mean => "mean",
        OpKind::BceLoss => "bce-loss",
        OpKind::MseLoss => "mse-loss",
        OpKind::Scale => "scale",
        OpKind::Sum => "sum",
        OpKind::Ln => "ln",
        OpKind::Abs => "abs",
        OpKind::Transpose => "transpose",
        OpKind::SelectRow => "select-row",
        OpKind::ConcatRows => "concat-rows",
        OpKind::MeanRows => "mean-rows",
    }
}

/// Largest relative disagreement between the analytic gradient of `loss`
/// with respect to `leaf` and a central finite difference with step `eps`.
///
/// Each entry contributes `|a - n| / max(|a|, |n|, 1e-12)`. The graph is left
/// in its original state.
pub fn grad_check(graph: &mut Graph, loss: NodeId, leaf: NodeId, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    graph.forward()?;
    let analytic = graph.backward(loss)?.get_or_zeros(graph, leaf);
    let original = graph.value(leaf).clone();
    let mut worst: f64 = 0.0;
    for i in 0..original.len() {
        let mut plus = original.clone();
        plus.data_mut()[i] += eps;
        graph.set_value(leaf, plus)?;
        graph.forward()?;
        let up = graph.value(loss).item()?;

        let mut minus = original.clone();
        minus.data_mut()[i] -= eps;
        graph.set_value(leaf, minus)?;
        graph.forward()?;
        let down = graph.value(loss).item()?;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    graph.set_value(leaf, original)?;
    graph.forward()?;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.leaf(t(&[vec![1.0], vec![1.0]]));
        let m = g.matmul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 7.0]);

        let z = g.leaf(Tensor::zeros(1, 4));
        let s = g.softmax_rows(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.25; 4]);

        let zero = g.leaf(Tensor::scalar(0.0));
        let sig = g.sigmoid(zero).unwrap();
        assert_eq!(g.value(sig).item().unwrap(), 0.5);
    }

    #[test]
    fn mse_gradient_by_hand() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(1.0));
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(0.0));
        let p = g.matmul(w, x).unwrap();
        let loss = g.mse_loss(p, y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().item().unwrap(), 8.0);
        assert_eq!(grads.get(loss).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn softmax_jacobian_diagonal_at_uniform() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::zeros(1, 2));
        let w = g.softmax_rows(s).unwrap();
        let pick = g.leaf(Tensor::row_vector(&[1.0, 0.0]));
        let w1 = g.hadamard(w, pick).unwrap();
        let out = g.sum(w1).unwrap();
        let grads = g.backward(out).unwrap();
        assert!((grads.get(s).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 2));
        let r = g.relu(a).unwrap();
        assert!(matches!(g.backward(r), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_and_numeric_errors() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
        let c = g.leaf(Tensor::zeros(3, 2));
        assert!(matches!(g.add(a, c), Err(Error::Dimension { .. })));
        let zero = g.leaf(Tensor::scalar(0.0));
        assert!(matches!(g.ln(zero), Err(Error::Numeric { op: "ln" })));
    }

    #[test]
    fn disconnected_leaf_checks_to_zero() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![0.3, -0.2]]));
        let unused = g.leaf(t(&[vec![1.0, 2.0]]));
        let s = g.sigmoid(x).unwrap();
        let loss = g.mean(s).unwrap();
        assert_eq!(grad_check(&mut g, loss, unused, 1e-6).unwrap(), 0.0);
        assert!(grad_check(&mut g, loss, x, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn linear_layer_grad_check() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]]));
        let w = g.leaf(t(&[vec![0.1, -0.4], vec![0.7, 0.2], vec![-0.3, 0.9]]));
        let b = g.leaf(Tensor::row_vector(&[0.05, -0.1]));
        let y = g.leaf(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let h = g.matmul(x, w).unwrap();
        let h = g.add(h, b).unwrap();
        let p = g.sigmoid(h).unwrap();
        let loss = g.bce_loss(p, y).unwrap();
        for leaf in [w, b, x] {
            assert!(grad_check(&mut g, loss, leaf, 1e-6).unwrap() < 1e-4);
        }
    }

    #[test]
    fn broadcast_reduces_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let row = g.leaf(Tensor::row_vector(&[0.5, -1.0]));
        let col = g.leaf(Tensor::col_vector(&[1.0, 2.0, 3.0]));
        let a = g.hadamard(x, row).unwrap();
        let b = g.add(a, col).unwrap();
        let loss = g.sum(b).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(row).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(grads.get(col).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![0.2, 0.4, -0.1]]));
        let s = g.softmax_rows(x).unwrap();
        let l = g.ln(s).unwrap();
        let loss = g.sum(l).unwrap();
        let a = g.backward(loss).unwrap();
        let b = g.backward(loss).unwrap();
        assert_eq!(a.get(x), b.get(x));
    }
}
