//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Nodes are appended in topological order during the forward pass (values
//! are computed eagerly at construction), so the backward pass is a single
//! reverse sweep that visits each node exactly once. The op set is exactly
//! what the codec networks, the factorized entropy model, and the training
//! losses need; there is no broadcasting beyond row-wise bias/gate ops.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// (m x n) + broadcast (1 x n)
    AddRowBias(NodeId, NodeId),
    /// (m x n) * broadcast (1 x n)
    MulRowGate(NodeId, NodeId),
    Scale(NodeId, f32),
    Shift(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    /// max(x, c); gradient passes only where x > c
    LowerClamp(NodeId, f32),
    /// x + u with u ~ U(-1/2,1/2) drawn at construction; gradient passes through
    AddNoise(NodeId),
    /// rows of a table selected per batch element
    GatherRows(NodeId, Vec<usize>),
    SliceRow(NodeId, usize),
    Column(NodeId, usize),
    Reshape(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// (m x n) -> (m x 1), mean over each row
    RowMean(NodeId),
    /// (m x 1) -> scalar: (1/m) * sum_i w_i * x_i
    WeightedMeanRows(NodeId, Vec<f32>),
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Option<Matrix>,
    param: bool,
}

/// Flat computation tape. Build forward with the methods below, then call
/// [`Graph::backward`] on a scalar node.
pub struct Graph {
    nodes: Vec<Node>,
    visits: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            visits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes visited by the most recent backward pass.
    pub fn last_backward_visits(&self) -> usize {
        self.visits
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            param: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward target w.r.t. this node, if retained.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Matrix> {
        self.nodes[id.0].grad.take()
    }

    /// Trainable leaf; its gradient is retained by backward.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.nodes[id.0].param = true;
        id
    }

    /// Non-trainable leaf (inputs, detached constants).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
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
        let v = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(x).add_row_broadcast(self.value(bias))?;
        Ok(self.push(Op::AddRowBias(x, bias), v))
    }

    pub fn mul_row_gate(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let gv = self.value(gate);
        if gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::contract(format!(
                "mul_row_gate: {:?} * {:?}",
                xv.shape(),
                gv.shape()
            )));
        }
        let mut v = xv.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            for (x, g) in row.iter_mut().zip(gv.data().iter()) {
                *x *= g;
            }
        }
        Ok(self.push(Op::MulRowGate(x, gate), v))
    }

    pub fn scale(&mut self, x: NodeId, s: f32) -> NodeId {
        let v = self.value(x).scale(s);
        self.push(Op::Scale(x, s), v)
    }

    pub fn shift(&mut self, x: NodeId, c: f32) -> NodeId {
        let v = self.value(x).map(|a| a + c);
        self.push(Op::Shift(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        self.push(Op::Relu(x), v)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(softplus);
        self.push(Op::Softplus(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.tanh());
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.ln());
        self.push(Op::Ln(x), v)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.abs());
        self.push(Op::Abs(x), v)
    }

    pub fn lower_clamp(&mut self, x: NodeId, floor: f32) -> NodeId {
        let v = self.value(x).map(|a| if a > floor { a } else { floor });
        self.push(Op::LowerClamp(x, floor), v)
    }

    /// Quantization proxy: value = x + u, u ~ U(-1/2, 1/2) i.i.d. per element.
    /// The noise is a constant w.r.t. x, so the gradient passes through.
    pub fn add_uniform_noise(&mut self, x: NodeId, rng: &mut SplitMix64) -> NodeId {
        let v = self.value(x).map(|a| a + rng.uniform_noise());
        self.push(Op::AddNoise(x), v)
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let mut v = Matrix::zeros(indices.len(), t.cols());
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= t.rows() {
                return Err(Error::contract(format!(
                    "gather_rows: index {idx} out of {}",
                    t.rows()
                )));
            }
            v.row_mut(r).copy_from_slice(t.row(idx));
        }
        Ok(self.push(Op::GatherRows(table, indices.to_vec()), v))
    }

    pub fn slice_row(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if r >= xv.rows() {
            return Err(Error::contract(format!("slice_row: {r} out of {}", xv.rows())));
        }
        let v = Matrix::row_vector(xv.row(r).to_vec());
        Ok(self.push(Op::SliceRow(x, r), v))
    }

    pub fn column(&mut self, x: NodeId, c: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if c >= xv.cols() {
            return Err(Error::contract(format!("column: {c} out of {}", xv.cols())));
        }
        let v = Matrix::col_vector(xv.column(c));
        Ok(self.push(Op::Column(x, c), v))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != rows * cols {
            return Err(Error::contract(format!(
                "reshape: {:?} -> ({rows},{cols})",
                xv.shape()
            )));
        }
        let v = Matrix::from_vec(rows, cols, xv.data().to_vec())?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum_f64() as f32;
        self.push(Op::SumAll(x), Matrix::filled(1, 1, s))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = (self.value(x).sum_f64() / n as f64) as f32;
        self.push(Op::MeanAll(x), Matrix::filled(1, 1, s))
    }

    pub fn row_mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let v = Matrix::col_vector(
            (0..xv.rows())
                .map(|r| (xv.row(r).iter().map(|&a| a as f64).sum::<f64>() / n) as f32)
                .collect(),
        );
        self.push(Op::RowMean(x), v)
    }

    /// (1/m) * sum_i weights[i] * x[i] for a column vector x.
    pub fn weighted_mean_rows(&mut self, x: NodeId, weights: &[f32]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.cols() != 1 || xv.rows() != weights.len() {
            return Err(Error::contract(format!(
                "weighted_mean_rows: {:?} with {} weights",
                xv.shape(),
                weights.len()
            )));
        }
        let m = xv.rows() as f64;
        let s = xv
            .data()
            .iter()
            .zip(weights.iter())
            .map(|(&a, &w)| a as f64 * w as f64)
            .sum::<f64>()
            / m;
        Ok(self.push(
            Op::WeightedMeanRows(x, weights.to_vec()),
            Matrix::filled(1, 1, s as f32),
        ))
    }

    /// Reverse sweep from a finite scalar loss. Gradients of `param` leaves
    /// are retained and can be read with [`Graph::grad`] / [`Graph::take_grad`];
    /// intermediate gradients are discarded as soon as they are consumed.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward target must be scalar, got {:?}",
                lv.shape()
            )));
        }
        if !lv.scalar().is_finite() {
            return Err(Error::NumericFailure(format!(
                "backward target is {}",
                lv.scalar()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::filled(1, 1, 1.0));
        self.visits = 0;

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.visits += 1;
            self.propagate(i, &g)?;
            if self.nodes[i].param {
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, contribution: Matrix) -> Result<()> {
        match &mut self.nodes[target.0].grad {
            Some(g) => g.add_assign(&contribution),
            slot => {
                *slot = Some(contribution);
                Ok(())
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix) -> Result<()> {
        // Ops are cheap to match on; values of parents are read through self.
        match &self.nodes[i].op {
            Op::Leaf => Ok(()),
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.matmul_nt(self.value(b))?;
                let db = self.value(a).matmul_tn(g)?;
                self.accumulate(a, da)?;
                self.accumulate(b, db)
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone())?;
                self.accumulate(b, g.clone())
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone())?;
                self.accumulate(b, g.scale(-1.0))
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.mul_elem(self.value(b))?;
                let db = g.mul_elem(self.value(a))?;
                self.accumulate(a, da)?;
                self.accumulate(b, db)
            }
            Op::AddRowBias(x, bias) => {
                let (x, bias) = (*x, *bias);
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, &v) in db.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                        *acc += v;
                    }
                }
                self.accumulate(x, g.clone())?;
                self.accumulate(bias, db)
            }
            Op::MulRowGate(x, gate) => {
                let (x, gate) = (*x, *gate);
                let gatev = self.value(gate).clone();
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    for (v, gv) in dx.row_mut(r).iter_mut().zip(gatev.data().iter()) {
                        *v *= gv;
                    }
                }
                let xv = self.value(x);
                let mut dgate = Matrix::zeros(1, gatev.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let cur = dgate.at(0, c) + g.at(r, c) * xv.at(r, c);
                        dgate.set(0, c, cur);
                    }
                }
                self.accumulate(x, dx)?;
                self.accumulate(gate, dgate)
            }
            Op::Scale(x, s) => {
                let (x, s) = (*x, *s);
                self.accumulate(x, g.scale(s))
            }
            Op::Shift(x) | Op::AddNoise(x) => {
                let x = *x;
                self.accumulate(x, g.clone())
            }
            Op::Relu(x) => {
                let x = *x;
                let mask = self.value(x).map(|a| if a > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(x, g.mul_elem(&mask)?)
            }
            Op::Softplus(x) => {
                let x = *x;
                let d = self.value(x).map(sigmoid);
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::Tanh(x) => {
                let x = *x;
                let d = self.nodes[i].value.map(|t| 1.0 - t * t);
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let d = self.nodes[i].value.map(|s| s * (1.0 - s));
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::Ln(x) => {
                let x = *x;
                let d = self.value(x).map(|a| 1.0 / a);
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::Abs(x) => {
                let x = *x;
                let d = self.value(x).map(|a| {
                    if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::LowerClamp(x, floor) => {
                let (x, floor) = (*x, *floor);
                let d = self.value(x).map(|a| if a > floor { 1.0 } else { 0.0 });
                self.accumulate(x, g.mul_elem(&d)?)
            }
            Op::GatherRows(table, indices) => {
                let table = *table;
                let indices = indices.clone();
                let (rows, cols) = self.value(table).shape();
                let mut dt = Matrix::zeros(rows, cols);
                for (r, &idx) in indices.iter().enumerate() {
                    for (acc, &v) in dt.row_mut(idx).iter_mut().zip(g.row(r).iter()) {
                        *acc += v;
                    }
                }
                self.accumulate(table, dt)
            }
            Op::SliceRow(x, r) => {
                let (x, r) = (*x, *r);
                let (rows, cols) = self.value(x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                dx.row_mut(r).copy_from_slice(g.row(0));
                self.accumulate(x, dx)
            }
            Op::Column(x, c) => {
                let (x, c) = (*x, *c);
                let (rows, cols) = self.value(x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    dx.set(r, c, g.at(r, 0));
                }
                self.accumulate(x, dx)
            }
            Op::Reshape(x) => {
                let x = *x;
                let (rows, cols) = self.value(x).shape();
                let dx = Matrix::from_vec(rows, cols, g.data().to_vec())?;
                self.accumulate(x, dx)
            }
            Op::SumAll(x) => {
                let x = *x;
                let (rows, cols) = self.value(x).shape();
                self.accumulate(x, Matrix::filled(rows, cols, g.scalar()))
            }
            Op::MeanAll(x) => {
                let x = *x;
                let (rows, cols) = self.value(x).shape();
                let n = (rows * cols) as f32;
                self.accumulate(x, Matrix::filled(rows, cols, g.scalar() / n))
            }
            Op::RowMean(x) => {
                let x = *x;
                let (rows, cols) = self.value(x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let v = g.at(r, 0) / cols as f32;
                    dx.row_mut(r).fill(v);
                }
                self.accumulate(x, dx)
            }
            Op::WeightedMeanRows(x, weights) => {
                let x = *x;
                let w = weights.clone();
                let m = w.len() as f32;
                let dx = Matrix::col_vector(w.iter().map(|&wi| wi * g.scalar() / m).collect());
                self.accumulate(x, dx)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let p = g.param(Matrix::row_vector(vec![1.0, 2.0, 3.0]));
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let p = g.param(Matrix::row_vector(vec![1.0, 2.0]));
        let sq = g.mul(p, p).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn noise_gradient_passes_through() {
        let mut rng = SplitMix64::new(9);
        let mut g = Graph::new();
        let p = g.param(Matrix::zeros(1, 8));
        let noisy = g.add_uniform_noise(p, &mut rng);
        for &v in g.value(noisy).data() {
            assert!(v > -0.5 && v < 0.5);
        }
        let loss = g.sum_all(noisy);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn non_scalar_backward_is_contract_violation() {
        let mut g = Graph::new();
        let p = g.param(Matrix::zeros(2, 2));
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_loss_is_numeric_failure() {
        let mut g = Graph::new();
        let p = g.param(Matrix::filled(1, 1, -1.0));
        let l = g.ln(p); // ln(-1) = NaN
        assert!(matches!(g.backward(l), Err(Error::NumericFailure(_))));
    }

    #[test]
    fn each_node_visited_at_most_once() {
        let mut g = Graph::new();
        let p = g.param(Matrix::row_vector(vec![0.3, -0.2, 0.9]));
        let a = g.tanh(p);
        let b = g.mul(a, a).unwrap(); // diamond: a consumed twice
        let c = g.add(b, a).unwrap();
        let loss = g.sum_all(c);
        g.backward(loss).unwrap();
        assert!(g.last_backward_visits() <= g.len());
    }

    /// Central finite differences on a 2-block residual MLP (the
    /// independent oracle for this module's gradients).
    #[test]
    fn residual_mlp_matches_finite_differences() {
        let mut rng = SplitMix64::new(404);
        let w = 6usize;
        let mk = |rng: &mut SplitMix64, r, c| {
            Matrix::from_fn(r, c, |_, _| (rng.next_f32() - 0.5) * 0.8)
        };
        let input = mk(&mut rng, 3, w);
        let params: Vec<Matrix> = (0..4).map(|_| mk(&mut rng, w, w)).collect();

        let eval = |params: &[Matrix]| -> (f32, Option<Vec<Matrix>>) {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
            let mut h = x;
            for chunk in ids.chunks(2) {
                let lin = g.matmul(h, chunk[0]).unwrap();
                let lin2 = g.matmul(lin, chunk[1]).unwrap();
                let act = g.relu(lin2);
                h = g.add(h, act).unwrap();
                h = g.tanh(h);
            }
            let sq = g.mul(h, h).unwrap();
            let loss = g.sum_all(sq);
            g.backward(loss).unwrap();
            let grads = ids.iter().map(|&id| g.take_grad(id).unwrap()).collect();
            (g.value(loss).scalar(), Some(grads))
        };

        let (_, grads) = eval(&params);
        let grads = grads.unwrap();
        let h = 1e-3f32;
        let mut max_rel = 0.0f64;
        for (pi, p) in params.iter().enumerate() {
            for idx in 0..p.len() {
                let mut plus = params.to_vec();
                plus[pi].data_mut()[idx] += h;
                let mut minus = params.to_vec();
                minus[pi].data_mut()[idx] -= h;
                let fd = (eval(&plus).0 as f64 - eval(&minus).0 as f64) / (2.0 * h as f64);
                let an = grads[pi].data()[idx] as f64;
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }
}
