//! Eager reverse-mode tape over dense tensors.
//!
//! Every operation computes its value when recorded, so node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep that
//! visits each node exactly once. Gradients themselves are plain tensor
//! math: the one nested derivative this crate needs (the SDF's spatial
//! gradient) is built *into the forward graph* by
//! [`super::mlp::Mlp::forward_with_input_grad`], so a single reverse sweep
//! differentiates losses that consume it.

use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[m x n] + [1 x n]`, broadcasting the row over all rows.
    AddRow(Var, Var),
    /// Tensor times a `1x1` scalar variable.
    MulScalar(Var, Var),
    Reciprocal(Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    Neg(Var),
    Relu(Var),
    /// Heaviside step; derivative defined as zero everywhere.
    Step(Var),
    Softplus(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Sin(Var),
    Cos(Var),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    Max2(Var, Var),
    Min2(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    /// `[m x n] -> [m x 1]`, summing each row.
    RowSum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Rows of the input scattered into a zero tensor of `out_rows` rows.
    /// Indices must be unique.
    ScatterRows(Var, Vec<usize>, usize),
    /// Exclusive cumulative product down a column vector.
    CumprodExclusive(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether any trainable leaf can be reached from this node; backward
    /// skips gradient flow into inactive subgraphs.
    active: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the swept output w.r.t. `v`; zeros if `v` never
    /// influenced the output.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.nodes[v.0].value.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let active = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            // Step has a zero derivative, so nothing upstream matters.
            Op::Step(_) => false,
            other => self.op_inputs(other).iter().any(|v| self.nodes[v.0].active),
        };
        self.nodes.push(Node { op, value, active });
        Var(self.nodes.len() - 1)
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulScalar(a, b)
            | Op::Max2(a, b)
            | Op::Min2(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Reciprocal(a)
            | Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::Neg(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Softplus(a, _)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::ClampMin(a, _)
            | Op::ClampMax(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::RowSum(a)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _, _)
            | Op::CumprodExclusive(a) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }

    /// Record a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    /// Record a constant leaf (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    /// Copy a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(Op::Div(a, b), value)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, n), "add_row wants a 1x{n} row");
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            let chunk = &mut value.data_mut()[i * n..(i + 1) * n];
            for (v, b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1), "mul_scalar wants a 1x1 scalar");
        let sv = self.value(s).item();
        let value = self.value(a).scale(sv);
        self.push(Op::MulScalar(a, s), value)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push(Op::Reciprocal(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a, c), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn step(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(Op::Step(a), value)
    }

    pub fn softplus(&mut self, a: Var, beta: f64) -> Var {
        let value = self.value(a).map(|x| stable_softplus(beta * x) / beta);
        self.push(Op::Softplus(a, beta), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        self.push(Op::Sin(a), value)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), value)
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.max(c));
        self.push(Op::ClampMin(a, c), value)
    }

    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.min(c));
        self.push(Op::ClampMax(a, c), value)
    }

    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), f64::max);
        self.push(Op::Max2(a, b), value)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), f64::min);
        self.push(Op::Min2(a, b), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), value)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        assert!(n > 0, "mean of an empty tensor");
        let value = Tensor::scalar(self.value(a).sum() / n as f64);
        self.push(Op::MeanAll(a), value)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.shape();
        let mut out = Tensor::zeros(m, 1);
        for r in 0..m {
            out.data_mut()[r] = super::tensor::pairwise_sum(t.row_slice(r));
        }
        let _ = n;
        self.push(Op::RowSum(a), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(m, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), m, "concat_cols row mismatch");
            let w = t.cols();
            for r in 0..m {
                out.data_mut()[r * total + off..r * total + off + w]
                    .copy_from_slice(t.row_slice(r));
            }
            off += w;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (m, n) = t.shape();
        assert!(start + len <= n, "slice_cols out of range");
        let mut out = Tensor::zeros(m, len);
        for r in 0..m {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&t.row_slice(r)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start, len), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(total * n);
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), n, "concat_rows col mismatch");
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(total, n, data);
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::from_vec(idx.len(), n, data);
        self.push(Op::GatherRows(a, idx.to_vec()), out)
    }

    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], out_rows: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "scatter_rows index count mismatch");
        let n = t.cols();
        let mut out = Tensor::zeros(out_rows, n);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < out_rows, "scatter_rows index {i} out of range");
            out.data_mut()[i * n..(i + 1) * n].copy_from_slice(t.row_slice(r));
        }
        self.push(Op::ScatterRows(a, idx.to_vec(), out_rows), out)
    }

    /// Exclusive cumulative product of a column vector:
    /// `out[0] = 1, out[i] = prod(a[0..i])`.
    pub fn cumprod_exclusive(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.cols(), 1, "cumprod_exclusive wants a column vector");
        let m = t.rows();
        let mut out = Tensor::zeros(m, 1);
        let mut acc = 1.0;
        for i in 0..m {
            out.data_mut()[i] = acc;
            acc *= t.data()[i];
        }
        self.push(Op::CumprodExclusive(a), out)
    }

    /// Fail when a node's value holds NaN or Inf.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        self.value(v).ensure_finite(context)
    }

    /// Reverse sweep from a scalar output, seeding with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        self.backward_with_seed(output, Tensor::scalar(1.0))
    }

    /// Reverse sweep with an explicit seed gradient on `output`.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::contract("backward on a var from another tape"));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::contract("seed shape mismatch in backward"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            // Leaves keep their gradient for extraction.
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].active {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose());
                let gb = val(*a).transpose().matmul(g);
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::Transpose(a) => self.add_grad(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                self.add_grad(grads, *a, g.zip(val(*b), |gi, bi| gi * bi));
                self.add_grad(grads, *b, g.zip(val(*a), |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                self.add_grad(grads, *a, g.zip(bv, |gi, bi| gi / bi));
                let av = val(*a);
                let mut gb = g.zip(av, |gi, ai| gi * ai);
                gb = gb.zip(bv, |x, bi| -x / (bi * bi));
                self.add_grad(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                self.add_grad(grads, *a, g.clone());
                let (m, n) = g.shape();
                let mut gr = Tensor::zeros(1, n);
                for r in 0..m {
                    for c in 0..n {
                        gr.data_mut()[c] += g.at(r, c);
                    }
                }
                self.add_grad(grads, *row, gr);
            }
            Op::MulScalar(a, s) => {
                let sv = val(*s).item();
                self.add_grad(grads, *a, g.scale(sv));
                let gs = g.zip(val(*a), |gi, ai| gi * ai).sum();
                self.add_grad(grads, *s, Tensor::scalar(gs));
            }
            Op::Reciprocal(a) => {
                let out = &self.nodes[i].value;
                self.add_grad(grads, *a, g.zip(out, |gi, oi| -gi * oi * oi));
            }
            Op::Scale(a, c) => self.add_grad(grads, *a, g.scale(*c)),
            // The constant shifts the value only; gradient passes through.
            Op::AddConst(a, c) => {
                debug_assert!(c.is_finite());
                self.add_grad(grads, *a, g.clone());
            }
            Op::Neg(a) => self.add_grad(grads, *a, g.scale(-1.0)),
            Op::Relu(a) => {
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            // Step's derivative is zero everywhere; nothing flows back.
            Op::Step(_) => {}
            Op::Softplus(a, beta) => {
                let b = *beta;
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| gi * stable_sigmoid(b * x)));
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[i].value;
                self.add_grad(grads, *a, g.zip(out, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value;
                self.add_grad(grads, *a, g.zip(out, |gi, e| gi * e));
            }
            Op::Ln(a) => {
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| gi / x));
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                self.add_grad(grads, *a, g.zip(out, |gi, s| gi * 0.5 / s));
            }
            Op::Square(a) => {
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| gi * 2.0 * x));
            }
            Op::Abs(a) => {
                self.add_grad(
                    grads,
                    *a,
                    g.zip(val(*a), |gi, x| gi * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }),
                );
            }
            Op::Sin(a) => {
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| gi * x.cos()));
            }
            Op::Cos(a) => {
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| -gi * x.sin()));
            }
            Op::ClampMin(a, c) => {
                let c = *c;
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| if x > c { gi } else { 0.0 }));
            }
            Op::ClampMax(a, c) => {
                let c = *c;
                self.add_grad(grads, *a, g.zip(val(*a), |gi, x| if x < c { gi } else { 0.0 }));
            }
            Op::Max2(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for k in 0..g.len() {
                    if av.data()[k] >= bv.data()[k] {
                        gb.data_mut()[k] = 0.0;
                    } else {
                        ga.data_mut()[k] = 0.0;
                    }
                }
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::Min2(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for k in 0..g.len() {
                    if av.data()[k] <= bv.data()[k] {
                        gb.data_mut()[k] = 0.0;
                    } else {
                        ga.data_mut()[k] = 0.0;
                    }
                }
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::SumAll(a) => {
                let (m, n) = val(*a).shape();
                self.add_grad(grads, *a, Tensor::filled(m, n, g.item()));
            }
            Op::MeanAll(a) => {
                let (m, n) = val(*a).shape();
                let len = (m * n) as f64;
                self.add_grad(grads, *a, Tensor::filled(m, n, g.item() / len));
            }
            Op::RowSum(a) => {
                let (m, n) = val(*a).shape();
                let mut ga = Tensor::zeros(m, n);
                for r in 0..m {
                    let gr = g.at(r, 0);
                    for c in 0..n {
                        ga.data_mut()[r * n + c] = gr;
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut gp = Tensor::zeros(m, w);
                    for r in 0..m {
                        gp.data_mut()[r * w..(r + 1) * w]
                            .copy_from_slice(&g.row_slice(r)[off..off + w]);
                    }
                    self.add_grad(grads, p, gp);
                    off += w;
                }
                debug_assert_eq!(off, total);
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = val(*a).shape();
                let mut ga = Tensor::zeros(m, n);
                for r in 0..m {
                    ga.data_mut()[r * n + start..r * n + start + len]
                        .copy_from_slice(g.row_slice(r));
                }
                self.add_grad(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut off = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let mut gp = Tensor::zeros(rows, n);
                    gp.data_mut()
                        .copy_from_slice(&g.data()[off * n..(off + rows) * n]);
                    self.add_grad(grads, p, gp);
                    off += rows;
                }
            }
            Op::GatherRows(a, idx) => {
                let (m, n) = val(*a).shape();
                let mut ga = Tensor::zeros(m, n);
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut ga.data_mut()[i * n..(i + 1) * n];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(r)) {
                        *d += s;
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::ScatterRows(a, idx, out_rows) => {
                debug_assert_eq!(g.rows(), *out_rows);
                let n = g.cols();
                let mut ga = Tensor::zeros(idx.len(), n);
                for (r, &i) in idx.iter().enumerate() {
                    ga.data_mut()[r * n..(r + 1) * n].copy_from_slice(g.row_slice(i));
                }
                self.add_grad(grads, *a, ga);
            }
            Op::CumprodExclusive(a) => {
                // out[i] = prod(a[0..i]); suffix recurrence avoids division:
                // s[j] = g[j+1] + a[j+1] * s[j+1], grad_a[j] = out[j] * s[j].
                let av = val(*a);
                let out = &self.nodes[i].value;
                let m = av.rows();
                let mut ga = Tensor::zeros(m, 1);
                let mut s = 0.0;
                for j in (0..m).rev() {
                    if j + 1 < m {
                        s = g.data()[j + 1] + av.data()[j + 1] * s;
                    } else {
                        s = 0.0;
                    }
                    ga.data_mut()[j] = out.data()[j] * s;
                }
                self.add_grad(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn identity_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let g = tape.backward(x).unwrap();
        assert_eq!(g.wrt(&tape, x).item(), 1.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(&tape, x).item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn chained_elementwise_matches_fd() {
        let x0 = 0.7;
        let f = |x: f64| ((x.sin() * x).exp() + 1.0).ln();
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(x0));
        let s = tape.sin(x);
        let m = tape.mul(s, x);
        let e = tape.exp(m);
        let p = tape.add_const(e, 1.0);
        let y = tape.ln(p);
        let g = tape.backward(y).unwrap();
        let fd = fd_scalar(f, x0);
        assert!((g.wrt(&tape, x).item() - fd).abs() < 1e-7);
    }

    #[test]
    fn matmul_gradients() {
        // y = sum(A * B); dA = ones * B', dB = A' * ones.
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]));
        let b = tape.param(Tensor::from_vec(3, 2, vec![2.0, 0.0, 1.0, 1.0, -1.0, 4.0]));
        let c = tape.matmul(a, b);
        let y = tape.sum_all(c);
        let g = tape.backward(y).unwrap();
        let ones = Tensor::filled(2, 2, 1.0);
        let want_a = ones.matmul(&tape.value(b).transpose());
        let want_b = tape.value(a).transpose().matmul(&ones);
        assert_eq!(g.wrt(&tape, a), want_a);
        assert_eq!(g.wrt(&tape, b), want_b);
    }

    #[test]
    fn cumprod_exclusive_values_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::column(&[0.5, 0.25, 0.8, 0.0, 0.9]));
        let t = tape.cumprod_exclusive(a);
        assert_eq!(tape.value(t).data(), &[1.0, 0.5, 0.125, 0.1, 0.0]);

        // Weighted loss so each output entry has a distinct gradient.
        let w = tape.constant(Tensor::column(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        let wt = tape.mul(t, w);
        let y = tape.sum_all(wt);
        let g = tape.backward(y).unwrap();
        let ga = g.wrt(&tape, a);

        // Finite differences; the zero entry exercises the no-division path.
        let base: Vec<f64> = vec![0.5, 0.25, 0.8, 0.0, 0.9];
        for j in 0..5 {
            let f = |xj: f64| {
                let mut v = base.clone();
                v[j] = xj;
                let mut acc = 1.0;
                let mut total = 0.0;
                for i in 0..5 {
                    total += (i as f64 + 1.0) * acc;
                    acc *= v[i];
                }
                total
            };
            let fd = fd_scalar(f, base[j]);
            assert!(
                (ga.at(j, 0) - fd).abs() < 1e-6,
                "cumprod grad[{j}]: {} vs fd {}",
                ga.at(j, 0),
                fd
            );
        }
    }

    #[test]
    fn gather_scatter_round_trip_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let gathered = tape.gather_rows(a, &[2, 0, 2]);
        assert_eq!(tape.value(gathered).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let y = tape.sum_all(gathered);
        let g = tape.backward(y).unwrap();
        // Row 2 gathered twice: gradient 2, row 0 once: 1, row 1 never: 0.
        assert_eq!(g.wrt(&tape, a).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);

        let mut tape = Tape::new();
        let b = tape.param(Tensor::from_vec(2, 1, vec![7.0, 8.0]));
        let scattered = tape.scatter_rows(b, &[3, 1], 5);
        assert_eq!(tape.value(scattered).data(), &[0.0, 8.0, 0.0, 7.0, 0.0]);
        let w = tape.constant(Tensor::column(&[1.0, 10.0, 100.0, 1000.0, 10000.0]));
        let wb = tape.mul(scattered, w);
        let y = tape.sum_all(wb);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(&tape, b).data(), &[1000.0, 10.0]);
    }

    #[test]
    fn detach_cuts_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.square(x);
        let d = tape.detach(y);
        let z = tape.mul(d, x);
        let g = tape.backward(z).unwrap();
        // z = detach(x^2) * x, so dz/dx = 4 (not 3x^2 = 12).
        assert_eq!(g.wrt(&tape, x).item(), 4.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(&[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.param(Tensor::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.37).collect()));
            let b = tape.param(Tensor::from_vec(3, 4, (0..12).map(|i| 1.0 - i as f64 * 0.11).collect()));
            let c = tape.matmul(a, b);
            let s = tape.sigmoid(c);
            let y = tape.mean_all(s);
            tape.value(y).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
