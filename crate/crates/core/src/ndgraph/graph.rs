use std::fmt;

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a vector-valued function recorded as an opaque node.
///
/// Implementors are the normalizers in `projections`; the graph only needs
/// to pull an upstream gradient back through them.
pub trait LocalJacobian {
    fn vjp(&self, upstream: &[f64]) -> Vec<f64>;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    PixelShuffle {
        input: Var,
        factor: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    PadAxis {
        input: Var,
        axis: usize,
    },
    Index(Var, usize),
    Stack(Vec<Var>),
    Softmax(Var),
    Vector {
        input: Var,
        jac: Box<dyn LocalJacobian>,
    },
    StraightThrough {
        soft: Var,
        index: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes can only reference earlier nodes, so the graph is acyclic and
/// append order is a valid topological order. A graph is meant to live for
/// one training step: build, call [`backward`](Graph::backward) once, drop.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<bool>,
}

impl Gradients {
    /// Accumulated gradient of `var`, or zeros if nothing flowed into it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Like [`get`](Self::get) but `None` when no gradient reached the node.
    pub fn try_get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient shape"))
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        self.leaves[var.0]
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() || a.len() == 1 || b.len() == 1 {
        Ok(())
    } else {
        Err(Error::shape(op, "operands", format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data).unwrap()
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.map(|x| f(x, y))
    } else {
        let x = a.data()[0];
        b.map(|y| f(x, y))
    }
}

/// Reduces an elementwise gradient onto an operand that may have been broadcast.
fn reduce_to(grad: Vec<f64>, target_len: usize) -> Vec<f64> {
    if grad.len() == target_len {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the graph can record a fresh step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies `var`'s value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let v = self.nodes[var.0].value.clone();
        self.constant(v)
    }

    /// Same-size cross-correlation; `input [N,Cin,H,W]`, `kernel [Cout,Cin/groups,k,k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize, groups: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        if x.rank() != 4 {
            return Err(Error::shape("conv2d", "input rank", format!("{:?}", x.shape())));
        }
        if w.rank() != 4 {
            return Err(Error::shape("conv2d", "kernel rank", format!("{:?}", w.shape())));
        }
        let (cout, cin_g, k, k2) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape("conv2d", "kernel size", format!("{k}x{k2}, must be odd and square")));
        }
        if padding != (k - 1) / 2 {
            return Err(Error::shape("conv2d", "padding", format!("{padding} for k={k}; only same-size padding is supported")));
        }
        let cin = x.dim(1);
        if groups == 0 || !cin.is_multiple_of(groups) || cout % groups != 0 {
            return Err(Error::shape("conv2d", "groups", format!("{groups} does not divide Cin={cin} and Cout={cout}")));
        }
        if cin / groups != cin_g {
            return Err(Error::shape(
                "conv2d",
                "Cin",
                format!("input has {cin} channels / {groups} groups but kernel expects {cin_g}"),
            ));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [cout] {
                return Err(Error::shape("conv2d", "bias", format!("{bs:?}, expected [{cout}]")));
            }
        }
        let geom = ConvGeom {
            batch: x.dim(0),
            cin,
            cout,
            height: x.dim(2),
            width: x.dim(3),
            k,
            pad: padding,
            groups,
        };
        let out = conv::forward(x.data(), w.data(), bias.map(|b| self.value(b).data()), &geom);
        let value = Tensor::new(&[geom.batch, cout, geom.height, geom.width], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Depth-to-space: `[N, C*n*n, H, W] -> [N, C, nH, nW]`.
    pub fn pixel_shuffle(&mut self, input: Var, n: usize) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::shape("pixel_shuffle", "rank", format!("{:?}", x.shape())));
        }
        let (b, cc, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if n == 0 || cc % (n * n) != 0 {
            return Err(Error::shape("pixel_shuffle", "channels", format!("{cc} not divisible by {n}^2")));
        }
        let c = cc / (n * n);
        let src = x.data();
        let (hh, ww) = (h * n, w * n);
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..n {
                    for j in 0..n {
                        let ic = ci * n * n + i * n + j;
                        for y in 0..h {
                            let srow = &src[((bi * cc + ic) * h + y) * w..][..w];
                            let drow = ((bi * c + ci) * hh + y * n + i) * ww + j;
                            for (x, &v) in srow.iter().enumerate() {
                                out[drow + x * n] = v;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[b, c, hh, ww], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::PixelShuffle { input, factor: n }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("add", self.value(a), self.value(b))?;
        let value = broadcast(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("sub", self.value(a), self.value(b))?;
        let value = broadcast(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("mul", self.value(a), self.value(b))?;
        let value = broadcast(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Leaky ReLU; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    /// Absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        self.push(value, Op::Abs(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if axis >= t.rank() {
            return Err(Error::shape("narrow", "axis", format!("{axis} for rank {}", t.rank())));
        }
        if len == 0 || start + len > t.dim(axis) {
            return Err(Error::shape(
                "narrow",
                "range",
                format!("{start}..{} outside extent {}", start + len, t.dim(axis)),
            ));
        }
        let (outer, extent, inner) = axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Narrow { input, axis, start }, rg))
    }

    /// Zero-extends `axis` to `total` entries, keeping existing entries first.
    pub fn pad_axis(&mut self, input: Var, axis: usize, total: usize) -> Result<Var> {
        let t = self.value(input);
        if axis >= t.rank() || total < t.dim(axis) {
            return Err(Error::shape("pad_axis", "extent", format!("cannot pad {:?} axis {axis} to {total}", t.shape())));
        }
        let (outer, extent, inner) = axis_split(t.shape(), axis);
        let mut data = vec![0.0; outer * total * inner];
        for o in 0..outer {
            data[o * total * inner..][..extent * inner].copy_from_slice(&t.data()[o * extent * inner..][..extent * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::PadAxis { input, axis }, rg))
    }

    /// Element `index` of a rank-1 tensor, as a scalar.
    pub fn index(&mut self, input: Var, index: usize) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 1 || index >= t.len() {
            return Err(Error::shape("index", "position", format!("{index} into {:?}", t.shape())));
        }
        let value = Tensor::scalar(t.data()[index]);
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Index(input, index), rg))
    }

    /// Packs single-element tensors into a rank-1 vector.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(items.len());
        for &v in items {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("stack", "element", format!("{:?} is not a scalar", t.shape())));
            }
            data.push(t.data()[0]);
        }
        let value = Tensor::new(&[items.len()], data)?;
        let rg = self.rg(items);
        Ok(self.push(value, Op::Stack(items.to_vec()), rg))
    }

    /// Max-shifted softmax over a rank-1 tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 1 {
            return Err(Error::shape("softmax", "rank", format!("{:?}", t.shape())));
        }
        let value = Tensor::from_vec(crate::projections::softmax_norm(t.data()));
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Softmax(input), rg))
    }

    /// Records a precomputed vector function `output = f(input)` whose
    /// backward pass is `jac.vjp`.
    pub fn vector_fn(&mut self, input: Var, output: Vec<f64>, jac: Box<dyn LocalJacobian>) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 1 || output.len() != t.len() {
            return Err(Error::shape(
                "vector_fn",
                "length",
                format!("input {:?}, output length {}", t.shape(), output.len()),
            ));
        }
        let value = Tensor::from_vec(output);
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Vector { input, jac }, rg))
    }

    /// Straight-through selector: forward value is exactly `1.0`, backward
    /// routes the upstream gradient to `soft[index]`.
    pub fn straight_through(&mut self, soft: Var, index: usize) -> Result<Var> {
        let t = self.value(soft);
        if t.rank() != 1 || index >= t.len() {
            return Err(Error::shape("straight_through", "index", format!("{index} into {:?}", t.shape())));
        }
        let rg = self.rg(&[soft]);
        Ok(self.push(Tensor::scalar(1.0), Op::StraightThrough { soft, index }, rg))
    }

    /// Reverse sweep from a single-element `loss`.
    ///
    /// Runs at most once per graph; a second call without [`reset`](Self::reset)
    /// is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let leaves = self
            .nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
            .collect();
        // Only leaves keep their gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes, leaves })
    }

    fn push_grad(&self, grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
        if self.nodes[var.0].requires_grad {
            accumulate(&mut grads[var.0], g);
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let need = (
                    self.requires_grad(*input),
                    self.requires_grad(*kernel),
                    bias.is_some_and(|b| self.requires_grad(b)),
                );
                let out = conv::backward(self.value(*input).data(), self.value(*kernel).data(), g, geom, need);
                if let Some(gi) = out.input {
                    self.push_grad(grads, *input, gi);
                }
                if let Some(gk) = out.kernel {
                    self.push_grad(grads, *kernel, gk);
                }
                if let (Some(b), Some(gb)) = (bias, out.bias) {
                    self.push_grad(grads, *b, gb);
                }
            }
            Op::PixelShuffle { input, factor } => {
                let n = *factor;
                let s = self.value(*input).shape();
                let (b, cc, h, w) = (s[0], s[1], s[2], s[3]);
                let c = cc / (n * n);
                let (hh, ww) = (h * n, w * n);
                let mut gi = vec![0.0; g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..n {
                            for j in 0..n {
                                let ic = ci * n * n + i * n + j;
                                for y in 0..h {
                                    let drow = ((bi * cc + ic) * h + y) * w;
                                    let srow = ((bi * c + ci) * hh + y * n + i) * ww + j;
                                    for x in 0..w {
                                        gi[drow + x] = g[srow + x * n];
                                    }
                                }
                            }
                        }
                    }
                }
                self.push_grad(grads, *input, gi);
            }
            Op::Add(a, b) => {
                let (la, lb) = (self.value(*a).len(), self.value(*b).len());
                self.push_grad(grads, *a, reduce_to(g.to_vec(), la));
                self.push_grad(grads, *b, reduce_to(g.to_vec(), lb));
            }
            Op::Sub(a, b) => {
                let (la, lb) = (self.value(*a).len(), self.value(*b).len());
                self.push_grad(grads, *a, reduce_to(g.to_vec(), la));
                self.push_grad(grads, *b, reduce_to(g.iter().map(|v| -v).collect(), lb));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = elementwise_grad(g, tb);
                    self.push_grad(grads, *a, reduce_to(ga, ta.len()));
                }
                if self.requires_grad(*b) {
                    let gb = elementwise_grad(g, ta);
                    self.push_grad(grads, *b, reduce_to(gb, tb.len()));
                }
            }
            Op::Scale(a, c) => {
                self.push_grad(grads, *a, g.iter().map(|v| v * c).collect());
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let gi = g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                self.push_grad(grads, *a, gi);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let gi = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { gv * slope })
                    .collect();
                self.push_grad(grads, *a, gi);
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let gi = g.iter().zip(x).map(|(gv, xv)| 2.0 * xv * gv).collect();
                self.push_grad(grads, *a, gi);
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let gi = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| {
                        if xv > 0.0 {
                            *gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.push_grad(grads, *a, gi);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.push_grad(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.push_grad(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::Narrow { input, axis, start } => {
                let src_shape = self.value(*input).shape();
                let (outer, extent, inner) = axis_split(src_shape, *axis);
                let len = node.value.dim(*axis);
                let mut gi = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    gi[(o * extent + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                self.push_grad(grads, *input, gi);
            }
            Op::PadAxis { input, axis } => {
                let src_shape = self.value(*input).shape();
                let (outer, extent, inner) = axis_split(src_shape, *axis);
                let total = node.value.dim(*axis);
                let mut gi = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    gi.extend_from_slice(&g[o * total * inner..][..extent * inner]);
                }
                self.push_grad(grads, *input, gi);
            }
            Op::Index(input, index) => {
                let mut gi = vec![0.0; self.value(*input).len()];
                gi[*index] = g[0];
                self.push_grad(grads, *input, gi);
            }
            Op::Stack(items) => {
                for (k, &v) in items.iter().enumerate() {
                    self.push_grad(grads, v, vec![g[k]]);
                }
            }
            Op::Softmax(input) => {
                let s = node.value.data();
                let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
                let gi = g.iter().zip(s).map(|(gv, sv)| sv * (gv - dot)).collect();
                self.push_grad(grads, *input, gi);
            }
            Op::Vector { input, jac } => {
                self.push_grad(grads, *input, jac.vjp(g));
            }
            Op::StraightThrough { soft, index } => {
                let mut gi = vec![0.0; self.value(*soft).len()];
                gi[*index] = g[0];
                self.push_grad(grads, *soft, gi);
            }
        }
    }
}

fn elementwise_grad(g: &[f64], other: &Tensor) -> Vec<f64> {
    if other.len() == g.len() {
        g.iter().zip(other.data()).map(|(a, b)| a * b).collect()
    } else {
        let c = other.data()[0];
        g.iter().map(|a| a * c).collect()
    }
}
