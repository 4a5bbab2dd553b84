//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep. Every node
//! keeps its op and inputs, which lets [`Tape::replay`] recompute the forward
//! pass and compare bit-for-bit.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::tensor::{self, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `[r, c] + [c]`, the only broadcast supported.
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice(Var, Range<usize>),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node id; `None` for nodes the root does not depend on
/// through a differentiable path.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when no path reaches it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked")
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

    /// Record an input; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Slice(a, _)
            | Op::Dropout(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::MatMul(a, b) => tensor::matmul(v(a), v(b)),
            Op::Add(a, b) => {
                same_shape("add", v(a), v(b))?;
                Ok(zip_map(v(a), v(b), |x, y| x + y))
            }
            Op::Sub(a, b) => {
                same_shape("sub", v(a), v(b))?;
                Ok(zip_map(v(a), v(b), |x, y| x - y))
            }
            Op::AddBias(a, b) => {
                let (x, bias) = (v(a), v(b));
                let (r, c) = x.dims2()?;
                if bias.shape() != [c] {
                    return Err(shape_err("add_bias", x, bias));
                }
                let mut out = x.data().to_vec();
                for i in 0..r {
                    for (o, bv) in out[i * c..(i + 1) * c].iter_mut().zip(bias.data()) {
                        *o += bv;
                    }
                }
                Tensor::new(x.shape().to_vec(), out)
            }
            Op::Mul(a, b) => {
                same_shape("mul", v(a), v(b))?;
                Ok(zip_map(v(a), v(b), |x, y| x * y))
            }
            Op::Scale(a, c) => Ok(v(a).map(|x| x * c)),
            Op::AddScalar(a, c) => Ok(v(a).map(|x| x + c)),
            Op::Relu(a) => Ok(v(a).map(|x| if x > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => Ok(v(a).map(libm::tanh)),
            Op::Sqrt(a) => {
                if let Some((i, &x)) = v(a).data().iter().enumerate().find(|(_, &x)| !(x >= 0.0)) {
                    return Err(Error::Invalid(alloc::format!(
                        "sqrt of negative value {x} at element {i}"
                    )));
                }
                Ok(v(a).map(libm::sqrt))
            }
            Op::Softmax(a) => tensor::softmax_rows(v(a)),
            Op::LogSoftmax(a) => {
                let x = v(a);
                let (r, c) = x.dims2()?;
                let mut out = x.data().to_vec();
                for i in 0..r {
                    tensor::log_softmax_in_place(&mut out[i * c..(i + 1) * c]);
                }
                Tensor::new(x.shape().to_vec(), out)
            }
            Op::Log(a) => {
                let x = v(a);
                if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                    return Err(Error::LogNonPositive { index, value });
                }
                Ok(x.map(libm::log))
            }
            Op::Sum(a) => Ok(Tensor::scalar(v(a).data().iter().sum())),
            Op::Mean(a) => {
                let x = v(a);
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
            }
            Op::Concat(parts) => {
                let first = v(&parts[0]);
                let (r, _) = first.dims2()?;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (pr, pc) = v(p).dims2()?;
                    if pr != r || v(p).rank() != first.rank() {
                        return Err(shape_err("concat", first, v(p)));
                    }
                    widths.push(pc);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(r * total);
                for i in 0..r {
                    for (p, &w) in parts.iter().zip(&widths) {
                        out.extend_from_slice(&v(p).data()[i * w..(i + 1) * w]);
                    }
                }
                let shape = if first.rank() == 1 { vec![total] } else { vec![r, total] };
                Tensor::new(shape, out)
            }
            Op::Slice(a, range) => {
                let x = v(a);
                let (r, c) = x.dims2()?;
                if range.start > range.end || range.end > c {
                    return Err(Error::OutOfRange {
                        what: "slice end",
                        value: range.end,
                        limit: c,
                    });
                }
                let w = range.end - range.start;
                let mut out = Vec::with_capacity(r * w);
                for i in 0..r {
                    out.extend_from_slice(&x.data()[i * c + range.start..i * c + range.end]);
                }
                let shape = if x.rank() == 1 { vec![w] } else { vec![r, w] };
                Tensor::new(shape, out)
            }
            Op::Dropout(a, mask) => {
                let x = v(a);
                if mask.len() != x.len() {
                    return Err(Error::ShapeMismatch {
                        op: "dropout_mask_apply",
                        lhs: x.shape().to_vec(),
                        rhs: vec![mask.len()],
                    });
                }
                let data = x.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddBias(a, bias))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(a, c))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sqrt(a))
    }
    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Softmax(a))
    }
    /// Row-wise log-softmax, stable for large logits.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::LogSoftmax(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log(a))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }
    /// Concatenate along the last axis; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(crate::error::invalid("concat of zero tensors"));
        }
        self.record(Op::Concat(parts.to_vec()))
    }
    /// Columns `range` of every row.
    pub fn slice(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        self.record(Op::Slice(a, range))
    }
    /// Multiply by an explicit, caller-seeded mask (already scaled by 1/keep).
    pub fn dropout_mask_apply(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        self.record(Op::Dropout(a, mask))
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 || rv.rank() > 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| self.nodes[id].needs_grad)
                    .map(|g| Tensor::new(self.nodes[id].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        // Accumulate `f(i)` into the gradient buffer of `v`.
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl Fn(usize) -> f64) {
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            for (i, b) in buf.iter_mut().enumerate() {
                *b += f(i);
            }
        }
        fn buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if wants(a) {
                    gemm_nt_acc(m, n, k, g, bv.data(), buf(grads, *a, m * k));
                }
                if wants(b) {
                    gemm_tn_acc(m, k, n, av.data(), g, buf(grads, *b, k * n));
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if wants(x) {
                        acc(grads, *x, g.len(), |i| g[i]);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
                if wants(b) {
                    acc(grads, *b, g.len(), |i| -g[i]);
                }
            }
            Op::AddBias(a, b) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
                if wants(b) {
                    let c = val(b).len();
                    let gb = buf(grads, *b, c);
                    for row in g.chunks(c) {
                        for (o, x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                if wants(a) {
                    acc(grads, *a, g.len(), |i| g[i] * bv[i]);
                }
                if wants(b) {
                    acc(grads, *b, g.len(), |i| g[i] * av[i]);
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |i| g[i] * c);
                }
            }
            Op::AddScalar(a, _) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
            }
            Op::Relu(a) => {
                let x = val(a).data();
                acc(grads, *a, g.len(), |i| if x[i] > 0.0 { g[i] } else { 0.0 });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(grads, *a, g.len(), |i| g[i] * (1.0 - y[i] * y[i]));
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                acc(grads, *a, g.len(), |i| g[i] / (2.0 * y[i]));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let (r, c) = node.value.dims2().expect("softmax rank");
                let gb = buf(grads, *a, r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        gb[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let (r, c) = node.value.dims2().expect("log_softmax rank");
                let gb = buf(grads, *a, r * c);
                for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        gb[i * c + j] += gr[j] - libm::exp(y[i * c + j]) * gsum;
                    }
                }
            }
            Op::Log(a) => {
                let x = val(a).data();
                acc(grads, *a, g.len(), |i| g[i] / x[i]);
            }
            Op::Sum(a) => {
                let n = val(a).len();
                acc(grads, *a, n, |_| g[0]);
            }
            Op::Mean(a) => {
                let n = val(a).len();
                acc(grads, *a, n, |_| g[0] / n as f64);
            }
            Op::Concat(parts) => {
                let (r, total) = node.value.dims2().expect("concat rank");
                let mut offset = 0;
                for p in parts {
                    let (_, w) = val(p).dims2().expect("concat part rank");
                    if wants(p) {
                        let gb = buf(grads, *p, r * w);
                        for i in 0..r {
                            for j in 0..w {
                                gb[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, range) => {
                let (r, c) = val(a).dims2().expect("slice rank");
                let w = range.end - range.start;
                let gb = buf(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..w {
                        gb[i * c + range.start + j] += g[i * w + j];
                    }
                }
            }
            Op::Dropout(a, mask) => {
                acc(grads, *a, g.len(), |i| g[i] * mask[i]);
            }
        }
    }

    /// Recompute every non-leaf node from its recorded inputs and report
    /// whether all outputs match the recorded values bit-for-bit.
    pub fn replay(&self) -> Result<bool> {
        let mut scratch = Tape { nodes: Vec::with_capacity(self.nodes.len()) };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => scratch.eval(op)?,
            };
            let same = value.shape() == node.value.shape()
                && value
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
            scratch.nodes.push(Node {
                value,
                op: node.op.clone(),
                needs_grad: node.needs_grad,
            });
        }
        Ok(true)
    }

    /// Inputs of every node precede it.
    pub fn is_topological(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(id, n)| self.inputs(&n.op).iter().all(|v| v.0 < id))
    }
}
