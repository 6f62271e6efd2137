//! Operation record and reverse-mode gradient propagation.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use super::kernels::{
    axis_split, bcast_index, broadcast_shape, classify, matmul_nn, matmul_nt, matmul_tn,
    reduce_grad, ConvGeom,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Guard used by norm-based primitives; below it the direction is undefined
/// and the primitive returns zero with zero gradient.
pub const NORM_EPS: f64 = 1e-12;

/// A primitive whose forward pass is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Returns one gradient per input (`None` = no contribution).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Tanh(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MaxAxis(usize, usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Narrow(usize, usize, usize),
    Reshape(usize),
    Gather(usize, Rc<[usize]>),
    Normalize(usize),
    Norm(usize),
    Cross(usize, usize),
    CosSim(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Powf(..) => "powf",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::Concat(..) => "concat",
            Op::Narrow(..) => "narrow",
            Op::Reshape(..) => "reshape",
            Op::Gather(..) => "gather",
            Op::Normalize(..) => "normalize",
            Op::Norm(..) => "norm",
            Op::Cross(..) => "cross",
            Op::CosSim(..) => "cosine_similarity",
            Op::Conv2d { .. } => "conv2d",
            Op::Custom(c, _) => c.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// An ordered record of executed primitives. Nodes are appended in execution
/// order, so the record is always a valid topological order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one [`Graph::backward`] call.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }

    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        match self.grads.get_mut(v.id).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(&v.shape()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// A non-trainable leaf.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Tensor::scalar(x))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, op: Op, value: Tensor) -> Var<'_> {
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    /// Records a caller-evaluated primitive.
    pub fn custom<'g>(
        &'g self,
        op: Box<dyn CustomOp>,
        inputs: &[Var<'g>],
        output: Tensor,
    ) -> Var<'g> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.rg(&ids);
        self.push(output, Op::Custom(op, ids), rg)
    }

    /// Reverse-mode pass from a scalar root. Every node reached receives a
    /// freshly zeroed accumulator; nothing is carried over between calls.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rnode = &nodes[root.id];
        if rnode.value.numel() != 1 {
            return Err(Error::NonScalarRoot(rnode.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::from_parts(rnode.value.shape().to_vec(), vec![1.0]));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, ig) in vjp(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn shape_of(nodes: &[Node], id: usize) -> &[usize] {
    nodes[id].value.shape()
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_parts(shape.to_vec(), data)
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Vector-Jacobian products of one node, as (input id, gradient) pairs.
fn vjp(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let out = &node.value;
    let gd = g.data();
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let ba = classify(out.shape(), shape_of(nodes, *a));
            let bb = classify(out.shape(), shape_of(nodes, *b));
            let ga = reduce_grad(gd, &ba, val(*a).numel());
            let mut gb = reduce_grad(gd, &bb, val(*b).numel());
            if sign < 0.0 {
                gb.iter_mut().for_each(|x| *x = -*x);
            }
            vec![
                (*a, t(shape_of(nodes, *a), ga)),
                (*b, t(shape_of(nodes, *b), gb)),
            ]
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            let ba = classify(out.shape(), shape_of(nodes, *a));
            let bb = classify(out.shape(), shape_of(nodes, *b));
            let is_div = matches!(node.op, Op::Div(..));
            let n = gd.len();
            let mut ga_full = Vec::with_capacity(n);
            let mut gb_full = Vec::with_capacity(n);
            for i in 0..n {
                let x = va[bcast_index(&ba, i)];
                let y = vb[bcast_index(&bb, i)];
                if is_div {
                    ga_full.push(gd[i] / y);
                    gb_full.push(-gd[i] * x / (y * y));
                } else {
                    ga_full.push(gd[i] * y);
                    gb_full.push(gd[i] * x);
                }
            }
            vec![
                (*a, t(shape_of(nodes, *a), reduce_grad(&ga_full, &ba, va.len()))),
                (*b, t(shape_of(nodes, *b), reduce_grad(&gb_full, &bb, vb.len()))),
            ]
        }
        Op::Neg(a) => vec![(*a, g.map(|x| -x))],
        Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MatMul(a, b) => {
            let (sa, sb) = (shape_of(nodes, *a), shape_of(nodes, *b));
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let ga = matmul_nt(gd, val(*b).data(), m, n, k);
            let gb = matmul_tn(val(*a).data(), gd, m, k, n);
            vec![(*a, t(sa, ga)), (*b, t(sb, gb))]
        }
        Op::Transpose(a) => {
            let s = out.shape();
            vec![(*a, transpose2(g.data(), s[0], s[1]))]
        }
        Op::Sin(a) => vec![(*a, t(out.shape(), zip_map(gd, val(*a).data(), |g, x| g * x.cos())))],
        Op::Cos(a) => vec![(*a, t(out.shape(), zip_map(gd, val(*a).data(), |g, x| -g * x.sin())))],
        Op::Exp(a) => vec![(*a, t(out.shape(), zip_map(gd, out.data(), |g, y| g * y)))],
        Op::Ln(a) => vec![(*a, t(out.shape(), zip_map(gd, val(*a).data(), |g, x| g / x)))],
        Op::Sqrt(a) => vec![(
            *a,
            t(
                out.shape(),
                zip_map(gd, out.data(), |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }),
            ),
        )],
        Op::Tanh(a) => vec![(*a, t(out.shape(), zip_map(gd, out.data(), |g, y| g * (1.0 - y * y))))],
        Op::Sigmoid(a) => vec![(*a, t(out.shape(), zip_map(gd, out.data(), |g, y| g * y * (1.0 - y))))],
        Op::LeakyRelu(a, slope) => vec![(
            *a,
            t(
                out.shape(),
                zip_map(gd, val(*a).data(), |g, x| if x > 0.0 { g } else { g * slope }),
            ),
        )],
        Op::Powf(a, p) => vec![(
            *a,
            t(
                out.shape(),
                zip_map(gd, val(*a).data(), |g, x| {
                    if x == 0.0 && *p < 1.0 {
                        0.0
                    } else {
                        g * p * x.powf(p - 1.0)
                    }
                }),
            ),
        )],
        Op::Clamp(a, lo, hi) => vec![(
            *a,
            t(
                out.shape(),
                zip_map(gd, val(*a).data(), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            ),
        )],
        Op::Sum(a) => vec![(*a, Tensor::full(shape_of(nodes, *a), gd[0]))],
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            vec![(*a, Tensor::full(shape_of(nodes, *a), gd[0] / n))]
        }
        Op::SumAxis(a, axis) => {
            let sa = shape_of(nodes, *a);
            let (outer, ext, inner) = axis_split(sa, *axis);
            let mut ga = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                for e in 0..ext {
                    let dst = &mut ga[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                    dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*a, t(sa, ga))]
        }
        Op::MaxAxis(a, axis, argmax) => {
            let sa = shape_of(nodes, *a);
            let (outer, ext, inner) = axis_split(sa, *axis);
            let mut ga = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let e = argmax[o * inner + i];
                    ga[(o * ext + e) * inner + i] += gd[o * inner + i];
                }
            }
            vec![(*a, t(sa, ga))]
        }
        Op::Concat(ids, axis) => {
            let so = out.shape();
            let (outer, _, inner) = axis_split(so, *axis);
            let total = so[*axis];
            let mut offset = 0;
            let mut res = Vec::with_capacity(ids.len());
            for &id in ids {
                let s = shape_of(nodes, id);
                let ext = s[*axis];
                let mut gi = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gi.extend_from_slice(&gd[start..start + ext * inner]);
                }
                offset += ext;
                res.push((id, t(s, gi)));
            }
            res
        }
        Op::Narrow(a, axis, start) => {
            let sa = shape_of(nodes, *a);
            let (outer, ext, inner) = axis_split(sa, *axis);
            let len = out.shape()[*axis];
            let mut ga = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                let dst = (o * ext + start) * inner;
                ga[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(*a, t(sa, ga))]
        }
        Op::Reshape(a) => vec![(*a, t(shape_of(nodes, *a), gd.to_vec()))],
        Op::Gather(a, idx) => {
            let sa = shape_of(nodes, *a);
            let w = val(*a).numel() / sa[0].max(1);
            let mut ga = vec![0.0; val(*a).numel()];
            for (r, &src) in idx.iter().enumerate() {
                let dst = &mut ga[src * w..(src + 1) * w];
                for (d, s) in dst.iter_mut().zip(&gd[r * w..(r + 1) * w]) {
                    *d += s;
                }
            }
            vec![(*a, t(sa, ga))]
        }
        Op::Normalize(a) => {
            let x = val(*a).data();
            let w = *out.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0; x.len()];
            for r in 0..x.len() / w.max(1) {
                let xr = &x[r * w..(r + 1) * w];
                let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= NORM_EPS {
                    continue;
                }
                let yr = &out.data()[r * w..(r + 1) * w];
                let gr = &gd[r * w..(r + 1) * w];
                let yg: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for j in 0..w {
                    ga[r * w + j] = (gr[j] - yr[j] * yg) / n;
                }
            }
            vec![(*a, t(shape_of(nodes, *a), ga))]
        }
        Op::Norm(a) => {
            let x = val(*a).data();
            let w = *shape_of(nodes, *a).last().unwrap_or(&1);
            let mut ga = vec![0.0; x.len()];
            for (r, (&n, &g)) in out.data().iter().zip(gd).enumerate() {
                if n <= NORM_EPS {
                    continue;
                }
                for j in 0..w {
                    ga[r * w + j] = g * x[r * w + j] / n;
                }
            }
            vec![(*a, t(shape_of(nodes, *a), ga))]
        }
        Op::Cross(a, b) => {
            let (x, y) = (val(*a).data(), val(*b).data());
            let mut ga = vec![0.0; x.len()];
            let mut gb = vec![0.0; x.len()];
            for r in 0..x.len() / 3 {
                let (xa, ya, gr) = (&x[r * 3..r * 3 + 3], &y[r * 3..r * 3 + 3], &gd[r * 3..r * 3 + 3]);
                // d/da (a×b)·g = b×g ; d/db = g×a
                ga[r * 3..r * 3 + 3].copy_from_slice(&cross3(ya, gr));
                gb[r * 3..r * 3 + 3].copy_from_slice(&cross3(gr, xa));
            }
            vec![
                (*a, t(shape_of(nodes, *a), ga)),
                (*b, t(shape_of(nodes, *b), gb)),
            ]
        }
        Op::CosSim(a, b) => {
            let (x, y) = (val(*a).data(), val(*b).data());
            let w = *shape_of(nodes, *a).last().unwrap_or(&1);
            let mut ga = vec![0.0; x.len()];
            let mut gb = vec![0.0; x.len()];
            for (r, (&c, &g)) in out.data().iter().zip(gd).enumerate() {
                let (xr, yr) = (&x[r * w..(r + 1) * w], &y[r * w..(r + 1) * w]);
                let na = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = yr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na <= NORM_EPS || nb <= NORM_EPS {
                    continue;
                }
                for j in 0..w {
                    ga[r * w + j] = g * (yr[j] / (na * nb) - c * xr[j] / (na * na));
                    gb[r * w + j] = g * (xr[j] / (na * nb) - c * yr[j] / (nb * nb));
                }
            }
            vec![
                (*a, t(shape_of(nodes, *a), ga)),
                (*b, t(shape_of(nodes, *b), gb)),
            ]
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let geo = ConvGeom::new(shape_of(nodes, *x), shape_of(nodes, *w), *stride, *pad)
                .expect("conv2d geometry validated in forward");
            let ckk = geo.c_in * geo.k * geo.k;
            let hw = geo.h_out * geo.w_out;
            let cols = geo.im2col(val(*x).data());
            // out = W[c_out, ckk] · cols[ckk, hw] + b
            let gw = matmul_nt(gd, &cols, geo.c_out, hw, ckk);
            let gcols = matmul_tn(val(*w).data(), gd, geo.c_out, ckk, hw);
            let gx = geo.col2im(&gcols);
            let gb: Vec<f64> = gd.chunks_exact(hw).map(|c| c.iter().sum()).collect();
            vec![
                (*x, t(shape_of(nodes, *x), gx)),
                (*w, t(shape_of(nodes, *w), gw)),
                (*b, t(shape_of(nodes, *b), gb)),
            ]
        }
        Op::Custom(op, ids) => {
            let inputs: Vec<&Tensor> = ids.iter().map(|&i| val(i)).collect();
            op.backward(&inputs, out, g)
                .into_iter()
                .zip(ids)
                .filter_map(|(gi, &id)| gi.map(|gi| (id, gi)))
                .collect()
        }
    }
}

pub(crate) fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn transpose2(d: &[f64], rows: usize, cols: usize) -> Tensor {
    let mut out = vec![0.0; d.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = d[i * cols + j];
        }
    }
    Tensor::from_parts(vec![cols, rows], out)
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Name of the primitive that produced this node.
    pub fn op_name(&self) -> String {
        self.graph.nodes.borrow()[self.id].op.name().to_string()
    }

    /// Copy of the value with no graph connection.
    pub fn detach(&self) -> Tensor {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn binary(self, other: Var<'g>, name: &str, f: impl Fn(f64, f64) -> f64) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, a.shape(), b.shape()).unwrap_or_else(|e| panic!("{e}"));
        let ba = classify(&shape, a.shape());
        let bb = classify(&shape, b.shape());
        let n: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<f64> = match (&ba, &bb) {
            (super::kernels::Bcast::Same, super::kernels::Bcast::Same) => zip_map(ad, bd, &f),
            _ => (0..n)
                .map(|i| f(ad[bcast_index(&ba, i)], bd[bcast_index(&bb, i)]))
                .collect(),
        };
        drop((a, b));
        let op = match name {
            "add" => Op::Add(self.id, other.id),
            "sub" => Op::Sub(self.id, other.id),
            "mul" => Op::Mul(self.id, other.id),
            _ => Op::Div(self.id, other.id),
        };
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph.push(Tensor::from_parts(shape, data), op, rg)
    }

    fn elementwise(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.unary(self.id, op, v)
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        self.elementwise(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        self.elementwise(Op::AddScalar(self.id), |x| x + s)
    }

    pub fn sin(self) -> Var<'g> {
        self.elementwise(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'g> {
        self.elementwise(Op::Cos(self.id), f64::cos)
    }

    pub fn exp(self) -> Var<'g> {
        self.elementwise(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.elementwise(Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.elementwise(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn tanh(self) -> Var<'g> {
        self.elementwise(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.elementwise(Op::Sigmoid(self.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.elementwise(Op::LeakyRelu(self.id, slope), |x| if x > 0.0 { x } else { x * slope })
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.elementwise(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn square(self) -> Var<'g> {
        self * self
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.elementwise(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph.unary(self.id, Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'g> {
        let v = self.value();
        let m = v.sum() / v.numel() as f64;
        drop(v);
        self.graph.unary(self.id, Op::Mean(self.id), Tensor::scalar(m))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'g> {
        let v = self.value();
        let shape = v.shape().to_vec();
        assert!(axis < shape.len(), "sum_axis: axis {axis} out of range for {shape:?}");
        let (outer, ext, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        let d = v.data();
        for o in 0..outer {
            for e in 0..ext {
                let src = &d[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        drop(v);
        let mut os = shape;
        os.remove(axis);
        self.graph.unary(self.id, Op::SumAxis(self.id, axis), Tensor::from_parts(os, out))
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g> {
        let n = self.value().shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    /// Maximum over `axis`, removing it. Ties resolve to the first index.
    pub fn max_axis(self, axis: usize) -> Var<'g> {
        let v = self.value();
        let shape = v.shape().to_vec();
        assert!(axis < shape.len(), "max_axis: axis {axis} out of range for {shape:?}");
        let (outer, ext, inner) = axis_split(&shape, axis);
        assert!(ext > 0, "max_axis: empty axis");
        let d = v.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                for i in 0..inner {
                    let x = d[(o * ext + e) * inner + i];
                    if x > out[o * inner + i] {
                        out[o * inner + i] = x;
                        arg[o * inner + i] = e;
                    }
                }
            }
        }
        drop(v);
        let mut os = shape;
        os.remove(axis);
        self.graph
            .unary(self.id, Op::MaxAxis(self.id, axis, arg), Tensor::from_parts(os, out))
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            panic!("matmul: shape mismatch {sa:?} vs {sb:?}");
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = matmul_nn(a.data(), b.data(), m, k, n);
        drop((a, b));
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph
            .push(Tensor::from_parts(vec![m, n], c), Op::MatMul(self.id, other.id), rg)
    }

    pub fn transpose(self) -> Var<'g> {
        let v = self.value();
        let s = v.shape();
        assert_eq!(s.len(), 2, "transpose: expected a matrix, got {s:?}");
        let out = transpose2(v.data(), s[0], s[1]);
        drop(v);
        self.graph.unary(self.id, Op::Transpose(self.id), out)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let v = self.value();
        let n: usize = shape.iter().product();
        if n != v.numel() {
            panic!("reshape: cannot view {:?} as {:?}", v.shape(), shape);
        }
        let out = Tensor::from_parts(shape.to_vec(), v.data().to_vec());
        drop(v);
        self.graph.unary(self.id, Op::Reshape(self.id), out)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let v = self.value();
        let shape = v.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            panic!("narrow: range {start}..{} out of bounds for axis {axis} of {shape:?}", start + len);
        }
        let (outer, ext, inner) = axis_split(&shape, axis);
        let d = v.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * ext + start) * inner;
            out.extend_from_slice(&d[s..s + len * inner]);
        }
        drop(v);
        let mut os = shape;
        os[axis] = len;
        self.graph
            .unary(self.id, Op::Narrow(self.id, axis, start), Tensor::from_parts(os, out))
    }

    /// Rows `idx` of a tensor viewed as `[n, ...]`.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Var<'g> {
        let v = self.value();
        let shape = v.shape().to_vec();
        assert!(!shape.is_empty(), "gather_rows: scalar input");
        let w = v.numel() / shape[0].max(1);
        let d = v.data();
        let mut out = Vec::with_capacity(idx.len() * w);
        for &r in idx.iter() {
            assert!(r < shape[0], "gather_rows: index {r} out of range for {shape:?}");
            out.extend_from_slice(&d[r * w..(r + 1) * w]);
        }
        drop(v);
        let mut os = shape;
        os[0] = idx.len();
        self.graph
            .unary(self.id, Op::Gather(self.id, idx), Tensor::from_parts(os, out))
    }

    /// Unit vectors along the last axis; rows with norm ≤ [`NORM_EPS`] map to zero.
    pub fn normalize(self) -> Var<'g> {
        let v = self.value();
        let w = *v.shape().last().expect("normalize: scalar input");
        let mut out = v.data().to_vec();
        for row in out.chunks_exact_mut(w.max(1)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= NORM_EPS {
                row.iter_mut().for_each(|x| *x = 0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let shape = v.shape().to_vec();
        drop(v);
        self.graph
            .unary(self.id, Op::Normalize(self.id), Tensor::from_parts(shape, out))
    }

    /// L2 norm along the last axis (axis removed).
    pub fn norm(self) -> Var<'g> {
        let v = self.value();
        let w = *v.shape().last().expect("norm: scalar input");
        let out: Vec<f64> = v
            .data()
            .chunks_exact(w.max(1))
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut shape = v.shape().to_vec();
        shape.pop();
        drop(v);
        self.graph
            .unary(self.id, Op::Norm(self.id), Tensor::from_parts(shape, out))
    }

    /// Row-wise cross product of `[n, 3]` tensors.
    pub fn cross(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || a.shape().last() != Some(&3) {
            panic!("cross: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
        }
        let mut out = Vec::with_capacity(a.numel());
        for (x, y) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)) {
            out.extend_from_slice(&cross3(x, y));
        }
        let shape = a.shape().to_vec();
        drop((a, b));
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph
            .push(Tensor::from_parts(shape, out), Op::Cross(self.id, other.id), rg)
    }

    /// Cosine similarity along the last axis (axis removed). Zero when
    /// either operand row is shorter than [`NORM_EPS`].
    pub fn cosine_similarity(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || a.shape().is_empty() {
            panic!("cosine_similarity: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
        }
        let w = *a.shape().last().unwrap();
        let out: Vec<f64> = a
            .data()
            .chunks_exact(w)
            .zip(b.data().chunks_exact(w))
            .map(|(x, y)| {
                let na = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na <= NORM_EPS || nb <= NORM_EPS {
                    0.0
                } else {
                    x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (na * nb)
                }
            })
            .collect();
        let mut shape = a.shape().to_vec();
        shape.pop();
        drop((a, b));
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph
            .push(Tensor::from_parts(shape, out), Op::CosSim(self.id, other.id), rg)
    }

    /// 2-D convolution of a `[C,H,W]` image with `[O,C,k,k]` kernels and `[O]` bias.
    pub fn conv2d(self, weight: Var<'g>, bias: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let geo = ConvGeom::new(x.shape(), w.shape(), stride, pad).unwrap_or_else(|e| panic!("{e}"));
        if b.shape() != [geo.c_out] {
            panic!("conv2d: bias shape {:?} vs {} output channels", b.shape(), geo.c_out);
        }
        let ckk = geo.c_in * geo.k * geo.k;
        let hw = geo.h_out * geo.w_out;
        let cols = geo.im2col(x.data());
        let mut out = matmul_nn(w.data(), &cols, geo.c_out, ckk, hw);
        for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
            let bo = b.data()[o];
            chunk.iter_mut().for_each(|v| *v += bo);
        }
        drop((x, w, b));
        let rg = self.graph.rg(&[self.id, weight.id, bias.id]);
        self.graph.push(
            Tensor::from_parts(vec![geo.c_out, geo.h_out, geo.w_out], out),
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                stride,
                pad,
            },
            rg,
        )
    }
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'g>(parts: &[Var<'g>], axis: usize) -> Var<'g> {
    assert!(!parts.is_empty(), "concat: no inputs");
    let graph = parts[0].graph;
    let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    assert!(axis < base.len(), "concat: axis {axis} out of range for {base:?}");
    let mut total = 0;
    for v in &values {
        let s = v.shape();
        let ok = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            panic!("concat: shape mismatch {:?} vs {:?}", base, s);
        }
        total += s[axis];
    }
    let (outer, _, inner) = axis_split(&base, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let ext = v.shape()[axis];
            out.extend_from_slice(&v.data()[o * ext * inner..(o + 1) * ext * inner]);
        }
    }
    drop(values);
    let mut shape = base;
    shape[axis] = total;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = graph.rg(&ids);
    graph.push(Tensor::from_parts(shape, out), Op::Concat(ids, axis), rg)
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, "add", |a, b| a + b)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, "sub", |a, b| a - b)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, "mul", |a, b| a * b)
    }
}

impl<'g> Div for Var<'g> {
    type Output = Var<'g>;
    fn div(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, "div", |a, b| a / b)
    }
}

impl<'g> Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Var<'g> {
        self.scale(rhs)
    }
}

impl<'g> Add<f64> for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: f64) -> Var<'g> {
        self.add_scalar(rhs)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.elementwise(Op::Neg(self.id), |x| -x)
    }
}
