//! Tape-based reverse-mode automatic differentiation over dense arrays.
//!
//! Every primitive appends one node to a [`Graph`] and records how to
//! pull a cotangent back through itself. The pull-back rules are written
//! in terms of the same primitives, so [`Graph::grad`] extends the tape
//! while it runs. Gradients returned by `grad` are ordinary nodes and can
//! be differentiated again; this is how a force-matching loss, which
//! contains `−∂E/∂positions`, is differentiated with respect to the
//! parameters.
//!
//! Cotangents are accumulated in strictly descending node order, so a
//! backward pass over an identical tape is bitwise reproducible.

mod gradcheck;
mod tensor;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use tensor::{binary, broadcast_shape, broadcast_to, sum_to};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Which irreducible part of a trailing 3×3 block to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Scalar,
    Vector,
    Traceless,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumTo(Var),
    BroadcastTo(Var),
    Reshape(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Mix(Var, Var),
    ChannelOuter(Var, Var),
    MatMul3(Var, Var),
    Transpose3(Var),
    Irrep(Var, Part),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    Exp(Var),
    Cos(Var),
    Sin(Var),
    Sqrt(Var),
    Recip(Var),
    Silu(Var),
    SiluGrad(Var),
    SiluGrad2(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "multiply",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::SumTo(..) => "sum_reduce",
            Op::BroadcastTo(..) => "broadcast",
            Op::Reshape(..) => "reshape",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Mix(..) => "mix_channels",
            Op::ChannelOuter(..) => "channel_outer",
            Op::MatMul3(..) => "matmul3",
            Op::Transpose3(..) => "transpose3",
            Op::Irrep(..) => "irrep",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Exp(..) => "exp",
            Op::Cos(..) => "cos",
            Op::Sin(..) => "sin",
            Op::Sqrt(..) => "sqrt",
            Op::Recip(..) => "reciprocal",
            Op::Silu(..) => "silu",
            Op::SiluGrad(..) => "silu_grad",
            Op::SiluGrad2(..) => "silu_grad2",
        }
    }

    fn inputs(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::Mix(a, b)
            | Op::ChannelOuter(a, b)
            | Op::MatMul3(a, b) => [Some(a), Some(b)],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Transpose3(a)
            | Op::Irrep(a, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _)
            | Op::Exp(a)
            | Op::Cos(a)
            | Op::Sin(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Silu(a)
            | Op::SiluGrad(a)
            | Op::SiluGrad2(a) => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Multiplies the pull-back of every node of one primitive kind by a
/// constant. Only useful for demonstrating that gradient checks catch a
/// wrong rule.
#[derive(Clone, Copy, Debug)]
pub struct Fault {
    pub op: &'static str,
    pub factor: f64,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
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

    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = op
            .inputs()
            .iter()
            .flatten()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input (parameter or position).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb).ok_or_else(|| shape_err(op.name(), sa, sb))?;
        let value = binary(self.value(a), self.value(b), &out, f);
        self.push(op, value)
    }

    /// Elementwise sum with numpy broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with numpy broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(op, value)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// `x · σ(x)`
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Silu(a), silu)
    }

    fn silu_grad(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::SiluGrad(a), silu_grad)
    }

    fn silu_grad2(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::SiluGrad2(a), silu_grad2)
    }

    /// Sums over broadcast dimensions so the result has shape `target`.
    pub fn sum_to(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if broadcast_shape(target, s).as_deref() != Some(s) {
            return Err(shape_err("sum_reduce", s, target));
        }
        let value = sum_to(self.value(a), target);
        self.push(Op::SumTo(a), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.sum_to(a, &[])
    }

    pub fn broadcast_to(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if broadcast_shape(s, target).as_deref() != Some(target) {
            return Err(shape_err("broadcast", s, target));
        }
        let value = broadcast_to(self.value(a), target);
        self.push(Op::BroadcastTo(a), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(shape_err("reshape", s, shape));
        }
        let value = Tensor::from_parts(shape.to_vec(), self.value(a).data().to_vec());
        self.push(Op::Reshape(a), value)
    }

    /// `[m, k] · [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let xv = x[i * k + p];
                for (o, &yv) in row.iter_mut().zip(&y[p * n..(p + 1) * n]) {
                    *o += xv * yv;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", s, &[]));
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        self.push(Op::Transpose(a), Tensor::from_parts(vec![n, m], out))
    }

    /// Channel mixing: `out[n, d, k] = Σ_c w[d, c] · x[n, c, k]`.
    pub fn mix(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 3 || sw[1] != sx[1] {
            return Err(shape_err("mix_channels", sw, sx));
        }
        let (d_out, c_in, n, k) = (sw[0], sw[1], sx[0], sx[2]);
        let (wv, xv) = (self.value(w).data(), self.value(x).data());
        let mut out = vec![0.0; n * d_out * k];
        if k == 9 {
            for (o_atom, x_atom) in out.chunks_exact_mut(d_out * 9).zip(xv.chunks_exact(c_in * 9)) {
                for (o, w_row) in o_atom.chunks_exact_mut(9).zip(wv.chunks_exact(c_in)) {
                    let mut acc = [0.0; 9];
                    for (&wdc, x) in w_row.iter().zip(x_atom.chunks_exact(9)) {
                        for j in 0..9 {
                            acc[j] += wdc * x[j];
                        }
                    }
                    o.copy_from_slice(&acc);
                }
            }
        } else {
            for i in 0..n {
                for d in 0..d_out {
                    let o = &mut out[(i * d_out + d) * k..(i * d_out + d + 1) * k];
                    for c in 0..c_in {
                        let wdc = wv[d * c_in + c];
                        let xs = &xv[(i * c_in + c) * k..(i * c_in + c + 1) * k];
                        for (ov, &x) in o.iter_mut().zip(xs) {
                            *ov += wdc * x;
                        }
                    }
                }
            }
        }
        self.push(Op::Mix(w, x), Tensor::from_parts(vec![n, d_out, k], out))
    }

    /// `out[d, c] = Σ_{n,k} g[n, d, k] · x[n, c, k]`, the weight cotangent of [`Graph::mix`].
    pub fn channel_outer(&mut self, g: Var, x: Var) -> Result<Var> {
        let (sg, sx) = (self.shape(g), self.shape(x));
        if sg.len() != 3 || sx.len() != 3 || sg[0] != sx[0] || sg[2] != sx[2] {
            return Err(shape_err("channel_outer", sg, sx));
        }
        let (n, d_out, c_in, k) = (sg[0], sg[1], sx[1], sg[2]);
        let (gv, xv) = (self.value(g).data(), self.value(x).data());
        let mut out = vec![0.0; d_out * c_in];
        if k == 9 {
            for (g_atom, x_atom) in gv.chunks_exact(d_out * 9).zip(xv.chunks_exact(c_in * 9)) {
                for (o_row, gs) in out.chunks_exact_mut(c_in).zip(g_atom.chunks_exact(9)) {
                    let gs: &[f64; 9] = gs.try_into().expect("chunk of 9");
                    for (o, xs) in o_row.iter_mut().zip(x_atom.chunks_exact(9)) {
                        let mut dot = 0.0;
                        for j in 0..9 {
                            dot += gs[j] * xs[j];
                        }
                        *o += dot;
                    }
                }
            }
        } else {
            for i in 0..n {
                for d in 0..d_out {
                    let gs = &gv[(i * d_out + d) * k..(i * d_out + d + 1) * k];
                    for c in 0..c_in {
                        let xs = &xv[(i * c_in + c) * k..(i * c_in + c + 1) * k];
                        out[d * c_in + c] += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        self.push(Op::ChannelOuter(g, x), Tensor::from_parts(vec![d_out, c_in], out))
    }

    /// Batched 3×3 products over a trailing dimension of 9.
    pub fn matmul3(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.last() != Some(&9) {
            return Err(shape_err("matmul3", sa, sb));
        }
        let shape = sa.to_vec();
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; x.len()];
        for ((o, p), q) in out.chunks_exact_mut(9).zip(x.chunks_exact(9)).zip(y.chunks_exact(9)) {
            for r in 0..3 {
                for c in 0..3 {
                    o[3 * r + c] = p[3 * r] * q[c] + p[3 * r + 1] * q[3 + c] + p[3 * r + 2] * q[6 + c];
                }
            }
        }
        self.push(Op::MatMul3(a, b), Tensor::from_parts(shape, out))
    }

    pub fn transpose3(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.last() != Some(&9) {
            return Err(shape_err("transpose3", s, &[9]));
        }
        let shape = s.to_vec();
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (o, p) in out.chunks_exact_mut(9).zip(x.chunks_exact(9)) {
            for r in 0..3 {
                for c in 0..3 {
                    o[3 * r + c] = p[3 * c + r];
                }
            }
        }
        self.push(Op::Transpose3(a), Tensor::from_parts(shape, out))
    }

    /// Orthogonal projection of each trailing 3×3 block onto one irreducible part.
    pub fn irrep(&mut self, a: Var, part: Part) -> Result<Var> {
        let s = self.shape(a);
        if s.last() != Some(&9) {
            return Err(shape_err("irrep", s, &[9]));
        }
        let shape = s.to_vec();
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (o, p) in out.chunks_exact_mut(9).zip(x.chunks_exact(9)) {
            project(p, o, part);
        }
        self.push(Op::Irrep(a, part), Tensor::from_parts(shape, out))
    }

    /// Selects rows (first axis) by index.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let s = self.shape(a);
        let rows = *s.first().ok_or_else(|| shape_err("gather", s, &[]))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather", s, &[bad]));
        }
        let width: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = index.len();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index.iter() {
            out.extend_from_slice(&x[i * width..(i + 1) * width]);
        }
        self.push(Op::Gather(a, index), Tensor::from_parts(shape, out))
    }

    /// Adds row `r` of `a` into row `index[r]` of a zero tensor with `rows` rows.
    pub fn scatter_add(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.first() != Some(&index.len()) || index.iter().any(|&i| i >= rows) {
            return Err(shape_err("scatter_add", s, &[index.len(), rows]));
        }
        let width: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = rows;
        let x = self.value(a).data();
        let mut out = vec![0.0; rows * width];
        for (r, &i) in index.iter().enumerate() {
            for (o, v) in out[i * width..(i + 1) * width]
                .iter_mut()
                .zip(&x[r * width..(r + 1) * width])
            {
                *o += v;
            }
        }
        self.push(Op::ScatterAdd(a, index), Tensor::from_parts(shape, out))
    }

    /// `x · wᵀ`-free linear layer with weights stored `[in, out]`: `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Vector-Jacobian products of `output` with respect to `wrt`,
    /// recorded on the tape so they can be differentiated again.
    ///
    /// Inputs that `output` does not depend on get a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out_shape = self.shape(output).to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(out_shape));
        }
        let n = output.0 + 1;
        // nodes on some path from a `wrt` leaf
        let mut reaches = vec![false; n];
        for v in wrt {
            if v.0 < n {
                reaches[v.0] = true;
            }
        }
        for id in 0..n {
            if !reaches[id] {
                reaches[id] = self.nodes[id]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|v| reaches[v.0]);
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        if reaches[output.0] {
            adjoint[output.0] = Some(self.constant(Tensor::full(&out_shape, 1.0)));
        }
        for id in (0..n).rev() {
            let Some(g) = adjoint[id] else { continue };
            let op = self.nodes[id].op.clone();
            let inputs = op.inputs();
            let need = inputs.map(|v| v.is_some_and(|v| reaches[v.0]));
            if !need[0] && !need[1] {
                continue;
            }
            let pulled = self.vjp(&op, Var(id), g, need)?;
            for (input, contribution) in inputs.iter().zip(pulled) {
                let (Some(input), Some(mut c)) = (input, contribution) else {
                    continue;
                };
                if let Some(fault) = self.fault {
                    if fault.op == op.name() {
                        c = self.scale(c, fault.factor)?;
                    }
                }
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        wrt.iter()
            .map(|&v| match adjoint.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(v).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Gradients of a scalar with respect to every differentiable leaf
    /// created before it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let grads = self.grad(loss, &leaves)?;
        Ok(Gradients {
            by_leaf: leaves
                .into_iter()
                .zip(grads)
                .map(|(leaf, g)| (leaf, self.value(g).clone()))
                .collect(),
        })
    }

    fn reduce_like(&mut self, g: Var, like: Var) -> Result<Var> {
        if self.shape(g) == self.shape(like) {
            Ok(g)
        } else {
            let target = self.shape(like).to_vec();
            self.sum_to(g, &target)
        }
    }

    fn vjp(&mut self, op: &Op, out: Var, g: Var, need: [bool; 2]) -> Result<[Option<Var>; 2]> {
        let r = match *op {
            Op::Leaf => [None, None],
            Op::Add(a, b) => [
                need[0].then(|| self.reduce_like(g, a)).transpose()?,
                need[1].then(|| self.reduce_like(g, b)).transpose()?,
            ],
            Op::Sub(a, b) => {
                let ga = need[0].then(|| self.reduce_like(g, a)).transpose()?;
                let gb = if need[1] {
                    let n = self.neg(g)?;
                    Some(self.reduce_like(n, b)?)
                } else {
                    None
                };
                [ga, gb]
            }
            Op::Mul(a, b) => {
                let ga = if need[0] {
                    let t = self.mul(g, b)?;
                    Some(self.reduce_like(t, a)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let t = self.mul(g, a)?;
                    Some(self.reduce_like(t, b)?)
                } else {
                    None
                };
                [ga, gb]
            }
            Op::Neg(_) => [Some(self.neg(g)?), None],
            Op::Scale(_, c) => [Some(self.scale(g, c)?), None],
            Op::AddScalar(..) => [Some(g), None],
            Op::SumTo(a) | Op::BroadcastTo(a) | Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                let ga = match op {
                    Op::SumTo(_) => self.broadcast_to(g, &shape)?,
                    Op::BroadcastTo(_) => self.sum_to(g, &shape)?,
                    _ => self.reshape(g, &shape)?,
                };
                [Some(ga), None]
            }
            Op::MatMul(a, b) => {
                let ga = if need[0] {
                    let bt = self.transpose(b)?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let at = self.transpose(a)?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                [ga, gb]
            }
            Op::Transpose(_) => [Some(self.transpose(g)?), None],
            Op::Mix(w, x) => {
                let gw = need[0].then(|| self.channel_outer(g, x)).transpose()?;
                let gx = if need[1] {
                    let wt = self.transpose(w)?;
                    Some(self.mix(wt, g)?)
                } else {
                    None
                };
                [gw, gx]
            }
            Op::ChannelOuter(a, x) => {
                let ga = need[0].then(|| self.mix(g, x)).transpose()?;
                let gx = if need[1] {
                    let gt = self.transpose(g)?;
                    Some(self.mix(gt, a)?)
                } else {
                    None
                };
                [ga, gx]
            }
            Op::MatMul3(a, b) => {
                let ga = if need[0] {
                    let bt = self.transpose3(b)?;
                    Some(self.matmul3(g, bt)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let at = self.transpose3(a)?;
                    Some(self.matmul3(at, g)?)
                } else {
                    None
                };
                [ga, gb]
            }
            Op::Transpose3(_) => [Some(self.transpose3(g)?), None],
            // orthogonal projectors are self-adjoint
            Op::Irrep(_, part) => [Some(self.irrep(g, part)?), None],
            Op::Gather(a, ref index) => {
                let rows = self.shape(a)[0];
                [Some(self.scatter_add(g, index.clone(), rows)?), None]
            }
            Op::ScatterAdd(_, ref index) => [Some(self.gather(g, index.clone())?), None],
            Op::Exp(_) => [Some(self.mul(g, out)?), None],
            Op::Cos(a) => {
                let s = self.sin(a)?;
                let t = self.mul(g, s)?;
                [Some(self.neg(t)?), None]
            }
            Op::Sin(a) => {
                let c = self.cos(a)?;
                [Some(self.mul(g, c)?), None]
            }
            Op::Sqrt(_) => {
                let r = self.recip(out)?;
                let t = self.mul(g, r)?;
                [Some(self.scale(t, 0.5)?), None]
            }
            Op::Recip(_) => {
                let sq = self.mul(out, out)?;
                let t = self.mul(g, sq)?;
                [Some(self.neg(t)?), None]
            }
            Op::Silu(a) => {
                let d = self.silu_grad(a)?;
                [Some(self.mul(g, d)?), None]
            }
            Op::SiluGrad(a) => {
                let d = self.silu_grad2(a)?;
                [Some(self.mul(g, d)?), None]
            }
            Op::SiluGrad2(_) => return Err(Error::Unsupported("silu_grad2")),
        };
        Ok(r)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn silu_grad2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

fn project(p: &[f64], o: &mut [f64], part: Part) {
    let third_trace = (p[0] + p[4] + p[8]) / 3.0;
    match part {
        Part::Scalar => {
            o.fill(0.0);
            o[0] = third_trace;
            o[4] = third_trace;
            o[8] = third_trace;
        }
        Part::Vector => {
            for r in 0..3 {
                for c in 0..3 {
                    o[3 * r + c] = 0.5 * (p[3 * r + c] - p[3 * c + r]);
                }
            }
        }
        Part::Traceless => {
            for r in 0..3 {
                for c in 0..3 {
                    o[3 * r + c] = 0.5 * (p[3 * r + c] + p[3 * c + r]);
                }
                o[4 * r] -= third_trace;
            }
        }
    }
}
