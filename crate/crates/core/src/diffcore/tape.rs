//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is an arena of nodes. Every primitive appends its result, so
//! the arena order is a topological order of the computation and a backward
//! pass is a single reverse sweep over it. Nodes whose inputs are all
//! constants are stored as constant leaves and carry no gradient rule.
//!
//! ```
//! use dagvi::diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::row(vec![1.0, 2.0]));
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

use super::tensor::{gemm, Tensor};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis for reductions that keep one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along rows: each column is normalised independently.
    Rows,
    /// Along columns: each row is normalised independently.
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    LogSigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    StraightThrough(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` is not on
    /// any path to the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    // exp overflow gives 1/inf = 0, so no branch is needed
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Indices of the inputs of `var` (empty for leaves); used to verify the
    /// arena order by replay.
    pub fn inputs(&self, var: Var) -> Vec<Var> {
        match &self.nodes[var.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Softmax(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::StraightThrough(a) => vec![*a],
        }
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// Elementwise product with a constant (masking).
    pub fn mul_const(&mut self, a: Var, mask: &Tensor) -> Result<Var, DiffError> {
        let sa = self.value(a).shape();
        if sa != mask.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "mul_const",
                left: sa,
                right: mask.shape(),
            });
        }
        let v = self.value(a).zip_map(mask, |x, m| x * m);
        self.push("mul_const", v, Op::MulConst(a, mask.clone()), &[a])
    }

    /// Zeroes every row whose `keep` entry is zero (scales rows by `keep`).
    pub fn mask_rows(&mut self, a: Var, keep: &[f64]) -> Result<Var, DiffError> {
        let [r, c] = self.value(a).shape();
        if keep.len() != r {
            return Err(DiffError::ShapeMismatch {
                op: "mask_rows",
                left: [r, c],
                right: [keep.len(), 1],
            });
        }
        let mask = Tensor::from_fn(r, c, |i, _| keep[i]);
        self.mul_const(a, &mask)
    }

    /// Zeroes every column whose `keep` entry is zero (scales columns by `keep`).
    pub fn mask_cols(&mut self, a: Var, keep: &[f64]) -> Result<Var, DiffError> {
        let [r, c] = self.value(a).shape();
        if keep.len() != c {
            return Err(DiffError::ShapeMismatch {
                op: "mask_cols",
                left: [r, c],
                right: [1, keep.len()],
            });
        }
        let mask = Tensor::from_fn(r, c, |_, j| keep[j]);
        self.mul_const(a, &mask)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    /// `ln(sigmoid(x))`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(log_sigmoid);
        self.push("log_sigmoid", v, Op::LogSigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var, DiffError> {
        let v = softmax(self.value(a), axis);
        self.push("softmax", v, Op::Softmax(a, axis), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, DiffError> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "broadcast_rows",
                left: x.shape(),
                right: [rows, x.cols()],
            });
        }
        let v = Tensor::from_fn(rows, x.cols(), |_, j| x.get(0, j));
        self.push("broadcast_rows", v, Op::BroadcastRows(a), &[a])
    }

    /// Repeats an `r × 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var, DiffError> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "broadcast_cols",
                left: x.shape(),
                right: [x.rows(), cols],
            });
        }
        let v = Tensor::from_fn(x.rows(), cols, |i, _| x.get(i, 0));
        self.push("broadcast_cols", v, Op::BroadcastCols(a), &[a])
    }

    /// Forward value `hard`, backward gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var, DiffError> {
        let s = self.value(soft).shape();
        if hard.shape() != s {
            return Err(DiffError::ShapeMismatch {
                op: "straight_through",
                left: hard.shape(),
                right: s,
            });
        }
        self.push("straight_through", hard, Op::StraightThrough(soft), &[soft])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NonScalarLoss { shape: lv.shape() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, contrib: Tensor| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.zip_map(vb, |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(va, |x, y| x * y));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, *a, gemm(&g, false, vb, true));
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, *b, gemm(va, true, &g, false));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::AddScalar(a) | Op::StraightThrough(a) => acc(&mut grads, *a, g.clone()),
                Op::MulConst(a, m) => acc(&mut grads, *a, g.zip_map(m, |x, y| x * y)),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
                Op::LogSigmoid(a) => {
                    let va = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(va, |x, z| x * sigmoid(-z)));
                }
                Op::Relu(a) => {
                    let va = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(va, |x, z| if z > 0.0 { x } else { 0.0 }),
                    );
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |x, e| x * e)),
                Op::Log(a) => {
                    let va = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(va, |x, z| x / z));
                }
                Op::Square(a) => {
                    let va = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(va, |x, z| 2.0 * x * z));
                }
                Op::Softmax(a, axis) => acc(&mut grads, *a, softmax_backward(y, &g, *axis)),
                Op::Sum(a) => {
                    let [r, c] = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::full(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let [r, c] = self.value(*a).shape();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::full(r, c, g.item() / (r * c) as f64),
                    );
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::BroadcastRows(a) => {
                    let [r, c] = g.shape();
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for (o, v) in out.iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, Tensor::row(out));
                }
                Op::BroadcastCols(a) => {
                    let r = g.rows();
                    let out = (0..r).map(|i| g.row_slice(i).iter().sum()).collect();
                    acc(&mut grads, *a, Tensor::column(out));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = x.shape();
    let mut out = x.clone();
    let data = out.data_mut();
    let (outer, inner, stride_outer, stride_inner) = match axis {
        Axis::Cols => (r, c, c, 1),
        Axis::Rows => (c, r, 1, c),
    };
    for o in 0..outer {
        let base = o * stride_outer;
        let mut m = f64::NEG_INFINITY;
        for k in 0..inner {
            m = m.max(data[base + k * stride_inner]);
        }
        let mut s = 0.0;
        for k in 0..inner {
            let e = (data[base + k * stride_inner] - m).exp();
            data[base + k * stride_inner] = e;
            s += e;
        }
        for k in 0..inner {
            data[base + k * stride_inner] /= s;
        }
    }
    out
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = y.shape();
    let mut out = Tensor::zeros(r, c);
    let (outer, inner, stride_outer, stride_inner) = match axis {
        Axis::Cols => (r, c, c, 1),
        Axis::Rows => (c, r, 1, c),
    };
    let (yd, gd) = (y.data(), g.data());
    let od = out.data_mut();
    for o in 0..outer {
        let base = o * stride_outer;
        let dot: f64 = (0..inner)
            .map(|k| yd[base + k * stride_inner] * gd[base + k * stride_inner])
            .sum();
        for k in 0..inner {
            let i = base + k * stride_inner;
            od[i] = yd[i] * (gd[i] - dot);
        }
    }
    out
}
