//! Reverse-mode tape.
//!
//! Every backward rule is written in terms of tape operations, so gradients
//! computed with `create_graph = true` are themselves differentiable. This is
//! what gradient penalties on a discriminator's input need.

use std::cell::{Cell, RefCell};
use std::ops;

use crate::tensor::{ConvGeometry, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    LeakyRelu(usize, f64),
    Abs(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Im2Col(usize, ConvGeometry),
    Col2Im(usize, ConvGeometry),
    AvgPool2(usize),
    Upsample2(usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    BroadcastTo(usize),
    SumTo(usize),
    Concat(Vec<usize>, usize),
    Narrow { x: usize, axis: usize, start: usize },
    Pad { x: usize, axis: usize, before: usize },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul { a, b, .. } => vec![*a, *b],
            Neg(x) | Scale(x, _) | AddScalar(x) | Powf(x, _) | Exp(x) | Log(x) | Tanh(x)
            | Sigmoid(x) | Softplus(x) | LeakyRelu(x, _) | Abs(x) | Im2Col(x, _)
            | Col2Im(x, _) | AvgPool2(x) | Upsample2(x) | Permute(x, _) | Reshape(x)
            | BroadcastTo(x) | SumTo(x) => vec![*x],
            Concat(xs, _) => xs.clone(),
            Narrow { x, .. } | Pad { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A growing list of recorded operations. Create one per forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients can flow into.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Evaluate `f` without recording, so every result is a constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let previous = self.recording.replace(false);
        let out = f();
        self.recording.set(previous);
        out
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Gradients of `output` (summed if it is not a scalar) with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are recorded on this tape and
    /// can be differentiated again; otherwise they are constants.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Vec<Var<'t>> {
        let n = output.id + 1;
        let mut relevant = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id < n && nodes[w.id].requires_grad {
                    relevant[w.id] = true;
                }
            }
            let start = wrt.iter().map(|w| w.id).min().unwrap_or(n);
            for i in start..n {
                if !relevant[i] && nodes[i].requires_grad {
                    relevant[i] = nodes[i].op.inputs().iter().any(|&j| relevant[j]);
                }
            }
        }
        let zeros_for = |w: &Var<'t>| self.constant(Tensor::zeros(w.value().shape()));
        if !relevant[output.id] {
            return wrt.iter().map(zeros_for).collect();
        }

        let previous = self.recording.replace(create_graph);
        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        grads[output.id] = Some(self.constant(Tensor::ones(output.value().shape())));
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contributions = self.backward_rule(i, &op, g, &relevant);
            for (input, contribution) in contributions {
                grads[input] = Some(match grads[input] {
                    Some(existing) => existing + contribution,
                    None => contribution,
                });
            }
        }
        self.recording.set(previous);
        wrt.iter()
            .map(|w| grads[w.id].unwrap_or_else(|| zeros_for(w)))
            .collect()
    }

    /// Convenience wrapper returning gradient values.
    pub fn gradients<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Tensor> {
        self.grad(output, wrt, false)
            .into_iter()
            .map(|g| g.value())
            .collect()
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    fn backward_rule<'t>(
        &'t self,
        node: usize,
        op: &Op,
        g: Var<'t>,
        relevant: &[bool],
    ) -> Vec<(usize, Var<'t>)> {
        let mut out = Vec::with_capacity(2);
        let mut emit = |input: usize, grad: &dyn Fn() -> Var<'t>| {
            if relevant[input] {
                out.push((input, grad()));
            }
        };
        let y = self.var(node);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Op::Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| -g);
            }
            Op::Mul(a, b) => {
                emit(a, &|| g * self.var(b));
                emit(b, &|| g * self.var(a));
            }
            Op::Neg(x) => emit(x, &|| -g),
            Op::Scale(x, c) => emit(x, &|| g * c),
            Op::AddScalar(x) => emit(x, &|| g),
            Op::Powf(x, p) => emit(x, &|| g * (self.var(x).powf(p - 1.0) * p)),
            Op::Exp(x) => emit(x, &|| g * y),
            Op::Log(x) => emit(x, &|| g * self.var(x).powf(-1.0)),
            Op::Tanh(x) => emit(x, &|| g * ((y * y) * -1.0 + 1.0)),
            Op::Sigmoid(x) => emit(x, &|| g * (y * (y * -1.0 + 1.0))),
            Op::Softplus(x) => emit(x, &|| g * self.var(x).sigmoid()),
            Op::LeakyRelu(x, slope) => emit(x, &|| {
                let mask = self
                    .value(x)
                    .map(|v| if v > 0.0 { 1.0 } else { slope });
                g * self.constant(mask)
            }),
            Op::Abs(x) => emit(x, &|| {
                let sign = self.value(x).map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                g * self.constant(sign)
            }),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.var(a), self.var(b));
                emit(a, &|| {
                    if ta {
                        vb.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(vb, false, !tb)
                    }
                });
                emit(b, &|| {
                    if tb {
                        g.matmul_t(va, true, ta)
                    } else {
                        va.matmul_t(g, !ta, false)
                    }
                });
            }
            Op::Im2Col(x, geom) => emit(x, &|| g.col2im(&geom)),
            Op::Col2Im(x, geom) => emit(x, &|| g.im2col(&geom)),
            Op::AvgPool2(x) => emit(x, &|| g.upsample2() * 0.25),
            Op::Upsample2(x) => emit(x, &|| g.avg_pool2() * 4.0),
            Op::Permute(x, ref perm) => emit(x, &|| {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                g.permute(&inverse)
            }),
            Op::Reshape(x) => emit(x, &|| g.reshape(self.value(x).shape())),
            Op::BroadcastTo(x) => emit(x, &|| g.sum_to(self.value(x).shape())),
            Op::SumTo(x) => emit(x, &|| g.broadcast_to(self.value(x).shape())),
            Op::Concat(ref xs, axis) => {
                let mut start = 0;
                for &x in xs {
                    let len = self.value(x).shape()[axis];
                    emit(x, &|| g.narrow(axis, start, len));
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => emit(x, &|| {
                let full = self.value(x).shape()[axis];
                let len = g.value().shape()[axis];
                g.pad_axis(axis, start, full - start - len)
            }),
            Op::Pad { x, axis, before } => {
                emit(x, &|| g.narrow(axis, before, self.value(x).shape()[axis]))
            }
        }
        out
    }
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast rank mismatch {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "incompatible shapes {a:?} vs {b:?}");
            x.max(y)
        })
        .collect()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// The same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op)
    }

    /// Promote rank by prepending unit axes, then broadcast both operands.
    fn aligned(self, other: Var<'t>) -> (Var<'t>, Var<'t>) {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return (self, other);
        }
        let rank = sa.len().max(sb.len());
        let lift = |v: Var<'t>, s: &[usize]| {
            if s.len() == rank {
                v
            } else {
                let mut shape = vec![1; rank - s.len()];
                shape.extend_from_slice(s);
                v.reshape(&shape)
            }
        };
        let (a, b) = (lift(self, &sa), lift(other, &sb));
        let target = broadcast_shape(&a.shape(), &b.shape());
        (a.broadcast_to(&target), b.broadcast_to(&target))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v.powf(p)), Op::Powf(self.id, p))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn sqrt(self) -> Var<'t> {
        self.powf(0.5)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value().map(f64::ln), Op::Log(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(self.value().map(sigmoid), Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t> {
        self.unary(self.value().map(softplus), Op::Softplus(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            self.value().map(|v| if v > 0.0 { v } else { slope * v }),
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(self.value().map(f64::abs), Op::Abs(self.id))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.matmul_t(rhs, false, false)
    }

    /// `op(self) · op(rhs)` where `op` optionally transposes.
    pub fn matmul_t(self, rhs: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let value = self.value().matmul(&rhs.value(), ta, tb);
        self.tape.push(
            value,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
                ta,
                tb,
            },
        )
    }

    pub fn im2col(self, geom: &ConvGeometry) -> Var<'t> {
        self.unary(self.value().im2col(geom), Op::Im2Col(self.id, *geom))
    }

    pub fn col2im(self, geom: &ConvGeometry) -> Var<'t> {
        self.unary(self.value().col2im(geom), Op::Col2Im(self.id, *geom))
    }

    pub fn avg_pool2(self) -> Var<'t> {
        self.unary(self.value().avg_pool2(), Op::AvgPool2(self.id))
    }

    pub fn upsample2(self) -> Var<'t> {
        self.unary(self.value().upsample2(), Op::Upsample2(self.id))
    }

    pub fn permute(self, perm: &[usize]) -> Var<'t> {
        self.unary(self.value().permute(perm), Op::Permute(self.id, perm.to_vec()))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        self.unary(self.value().reshape(shape), Op::Reshape(self.id))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        self.unary(self.value().broadcast_to(shape), Op::BroadcastTo(self.id))
    }

    pub fn sum_to(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        self.unary(self.value().sum_to(shape), Op::SumTo(self.id))
    }

    /// Sum of all entries, as a rank-0 value.
    pub fn sum(self) -> Var<'t> {
        let ones = vec![1; self.shape().len()];
        self.sum_to(&ones).reshape(&[])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum() * (1.0 / n)
    }

    /// Mean over the axes where `shape` has size one.
    pub fn mean_to(self, shape: &[usize]) -> Var<'t> {
        let full: usize = self.shape().iter().product();
        let kept: usize = shape.iter().product();
        self.sum_to(shape) * (kept as f64 / full as f64)
    }

    pub fn concat(items: &[Var<'t>], axis: usize) -> Var<'t> {
        let tape = items[0].tape;
        let values: Vec<Tensor> = items.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let value = Tensor::concat(&refs, axis);
        tape.push(value, Op::Concat(items.iter().map(|v| v.id).collect(), axis))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        self.unary(
            self.value().narrow(axis, start, len),
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        )
    }

    pub fn pad_axis(self, axis: usize, before: usize, after: usize) -> Var<'t> {
        self.unary(
            self.value().pad_axis(axis, before, after),
            Op::Pad {
                x: self.id,
                axis,
                before,
            },
        )
    }

    /// 2-D convolution of an NCHW input with an `[out, in, kh, kw]` kernel, stride 1.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, padding: usize) -> Var<'t> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be [out, in, kh, kw]");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
        let geom = ConvGeometry {
            batch: xs[0],
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel_h: ws[2],
            kernel_w: ws[3],
            padding,
            stride: 1,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let cols = self.im2col(&geom);
        let kernel = weight.reshape(&[ws[0], ws[1] * ws[2] * ws[3]]);
        let out = kernel
            .matmul(cols)
            .reshape(&[ws[0], xs[0], oh, ow])
            .permute(&[1, 0, 2, 3]);
        match bias {
            Some(b) => out + b.reshape(&[1, ws[0], 1, 1]),
            None => out,
        }
    }

    /// `x · Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
        let out = self.matmul_t(weight, false, true);
        match bias {
            Some(b) => {
                let width = b.shape()[0];
                out + b.reshape(&[1, width])
            }
            None => out,
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(rhs);
        let value = a.value().zip_map(&b.value(), |x, y| x + y);
        a.tape.push(value, Op::Add(a.id, b.id))
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(rhs);
        let value = a.value().zip_map(&b.value(), |x, y| x - y);
        a.tape.push(value, Op::Sub(a.id, b.id))
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(rhs);
        let value = a.value().zip_map(&b.value(), |x, y| x * y);
        a.tape.push(value, Op::Mul(a.id, b.id))
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self * rhs.powf(-1.0)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(self.value().map(|v| -v), Op::Neg(self.id))
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v * c), Op::Scale(self.id, c))
    }
}

impl<'t> ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }
}

impl<'t> ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}
