//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation computes its value eagerly and appends a node to the tape.
//! Node ids are handed out in creation order, so the tape is always in
//! topological order. [`Graph::grad`] builds the adjoint computation out of
//! ordinary tape operations, which makes gradients themselves differentiable
//! (needed wherever a Jacobian enters a loss).

use std::cell::RefCell;
use std::ops;
use std::rc::Rc;

use super::activations::{sigmoid_scalar, softplus_scalar};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Sigmoid(usize),
    Swish(usize),
    Square(usize),
    Sqrt(usize),
    MulScalar(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    /// `[r, c] -> [c]`
    SumRows(usize),
    /// `[r, c] -> [r]`
    SumCols(usize),
    /// `[c] -> [r, c]`
    BroadcastRows(usize),
    /// `[r] -> [r, c]`
    BroadcastCols(usize),
    /// one element to any shape
    Expand(usize),
    Slice { src: usize, start: usize },
    Pad { src: usize, start: usize },
    Reshape(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// A tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input value. Leaves are differentiable when passed to
    /// [`Graph::grad`] and constant otherwise.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    pub fn vector(&self, v: Vec<f64>) -> Var<'_> {
        self.leaf(Tensor::vector(v))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn op_of(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`.
    ///
    /// The returned handles live on this graph and can be differentiated
    /// again.
    pub fn grad<'g>(&'g self, y: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if !std::ptr::eq(y.graph, self) || wrt.iter().any(|w| !std::ptr::eq(w.graph, self)) {
            return Err(Error::contract("variables belong to a different graph"));
        }
        let yv = y.value();
        if yv.numel() != 1 {
            return Err(Error::contract(format!(
                "gradient needs a scalar output, got shape {:?}",
                yv.shape()
            )));
        }
        let n = y.id + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
            }
        }
        for i in 0..n {
            if needs[i] {
                continue;
            }
            needs[i] = inputs(self.op_of(i)).iter().flatten().any(|&j| needs[j]);
        }

        let mut adj: Vec<Option<Var<'g>>> = vec![None; n];
        if needs[y.id] {
            adj[y.id] = Some(self.leaf(Tensor::full(yv.shape(), 1.0)));
        }
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.op_of(i);
            let out = self.var(i);
            let mut send = |j: usize, contrib: &dyn Fn() -> Var<'g>| {
                if needs[j] {
                    let c = contrib();
                    adj[j] = Some(match adj[j] {
                        Some(prev) => prev + c,
                        None => c,
                    });
                }
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    send(a, &|| unbroadcast(g, self.var(a)));
                    send(b, &|| unbroadcast(g, self.var(b)));
                }
                Op::Sub(a, b) => {
                    send(a, &|| unbroadcast(g, self.var(a)));
                    send(b, &|| unbroadcast(-g, self.var(b)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.var(a), self.var(b));
                    send(a, &|| unbroadcast(g * vb, va));
                    send(b, &|| unbroadcast(g * va, vb));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.var(a), self.var(b));
                    send(a, &|| unbroadcast(g / vb, va));
                    send(b, &|| unbroadcast(-(g * out) / vb, vb));
                }
                Op::Neg(a) => send(a, &|| -g),
                Op::Exp(a) => send(a, &|| g * out),
                Op::Log(a) => send(a, &|| g / self.var(a)),
                Op::Softplus(a) => send(a, &|| g * self.var(a).sigmoid()),
                Op::Sigmoid(a) => send(a, &|| g * (out * (1.0 - out))),
                Op::Swish(a) => send(a, &|| g * swish_derivative(self.var(a))),
                Op::Square(a) => send(a, &|| g * self.var(a) * 2.0),
                Op::Sqrt(a) => send(a, &|| g * 0.5 / out),
                Op::MulScalar(a, c) => send(a, &|| g * c),
                Op::AddScalar(a) => send(a, &|| g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.var(a), self.var(b));
                    send(a, &|| g.matmul(vb.t()));
                    send(b, &|| va.t().matmul(g));
                }
                Op::Transpose(a) => send(a, &|| g.t()),
                Op::SumAll(a) => send(a, &|| g.expand(self.value_of(a).shape())),
                Op::SumRows(a) => send(a, &|| g.broadcast_rows(self.value_of(a).rows())),
                Op::SumCols(a) => send(a, &|| g.broadcast_cols(self.value_of(a).cols())),
                Op::BroadcastRows(a) => send(a, &|| g.sum_rows()),
                Op::BroadcastCols(a) => send(a, &|| g.sum_cols()),
                Op::Expand(a) => send(a, &|| g.sum().reshape(self.value_of(a).shape())),
                Op::Slice { src, start } => send(src, &|| {
                    let shape = self.value_of(src).shape().to_vec();
                    let total = shape.iter().product();
                    g.pad(start, total).reshape(&shape)
                }),
                Op::Pad { src, start } => {
                    send(src, &|| g.slice(start, self.value_of(src).numel()))
                }
                Op::Reshape(a) => send(a, &|| g.reshape(self.value_of(a).shape())),
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(v) => v,
                None => self.leaf(Tensor::zeros(w.value().shape())),
            })
            .collect())
    }
}

fn inputs(op: Op) -> [Option<usize>; 2] {
    use Op::*;
    match op {
        Leaf => [None, None],
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => [Some(a), Some(b)],
        Neg(a) | Exp(a) | Log(a) | Softplus(a) | Sigmoid(a) | Swish(a) | Square(a) | Sqrt(a)
        | MulScalar(a, _) | AddScalar(a) | Transpose(a) | SumAll(a) | SumRows(a)
        | SumCols(a) | BroadcastRows(a) | BroadcastCols(a) | Expand(a) | Reshape(a) => {
            [Some(a), None]
        }
        Slice { src, .. } | Pad { src, .. } => [Some(src), None],
    }
}

/// Reduce an adjoint back to the shape of a broadcast scalar operand.
fn unbroadcast<'g>(g: Var<'g>, operand: Var<'g>) -> Var<'g> {
    let ov = operand.value();
    if ov.numel() == 1 && g.value().numel() != 1 {
        g.sum().reshape(ov.shape())
    } else {
        g
    }
}

/// d/dx [x·σ(x)] = σ(x) + x·σ(x)·(1 − σ(x)), built from tape ops.
pub(crate) fn swish_derivative(x: Var<'_>) -> Var<'_> {
    let s = x.sigmoid();
    s + x * s * (1.0 - s)
}

fn unary(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    v.map(f)
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value; panics on a multi-element tensor.
    pub fn item(&self) -> f64 {
        self.value()
            .item()
            .unwrap_or_else(|| panic!("item() on shape {:?}", self.shape()))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.push(value, op)
    }

    fn binary(self, rhs: Var<'g>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'g> {
        assert!(std::ptr::eq(self.graph, rhs.graph), "mixed graphs");
        let (a, b) = (self.value(), rhs.value());
        let value = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        } else if b.numel() == 1 {
            let y = b.data()[0];
            a.map(|x| f(x, y))
        } else if a.numel() == 1 {
            let x = a.data()[0];
            b.map(|y| f(x, y))
        } else {
            panic!("shape mismatch {:?} vs {:?}", a.shape(), b.shape());
        };
        self.push(value, op)
    }

    pub fn exp(self) -> Var<'g> {
        self.push(unary(&self.value(), f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        self.push(unary(&self.value(), f64::ln), Op::Log(self.id))
    }

    pub fn softplus(self) -> Var<'g> {
        self.push(unary(&self.value(), softplus_scalar), Op::Softplus(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.push(unary(&self.value(), sigmoid_scalar), Op::Sigmoid(self.id))
    }

    pub fn swish(self) -> Var<'g> {
        self.push(
            unary(&self.value(), |x| x * sigmoid_scalar(x)),
            Op::Swish(self.id),
        )
    }

    pub fn square(self) -> Var<'g> {
        self.push(unary(&self.value(), |x| x * x), Op::Square(self.id))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.push(unary(&self.value(), f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), rhs.value());
        assert!(
            a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
            "matmul shapes {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        self.push(tensor::matmul(&a, &b), Op::MatMul(self.id, rhs.id))
    }

    /// Matrix transpose.
    pub fn t(self) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.rank(), 2, "transpose of shape {:?}", a.shape());
        self.push(tensor::transpose(&a), Op::Transpose(self.id))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum() * (1.0 / n)
    }

    /// Column sums of a matrix: `[r, c] -> [c]`.
    pub fn sum_rows(self) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.rank(), 2);
        let c = a.cols();
        let mut out = vec![0.0; c];
        for i in 0..a.rows() {
            for (o, v) in out.iter_mut().zip(a.row(i)) {
                *o += v;
            }
        }
        self.push(Tensor::vector(out), Op::SumRows(self.id))
    }

    /// Row sums of a matrix: `[r, c] -> [r]`.
    pub fn sum_cols(self) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.rank(), 2);
        let out = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
        self.push(Tensor::vector(out), Op::SumCols(self.id))
    }

    /// Repeat a vector as `r` rows: `[c] -> [r, c]`.
    pub fn broadcast_rows(self, r: usize) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.rank(), 1);
        let mut data = Vec::with_capacity(r * a.numel());
        for _ in 0..r {
            data.extend_from_slice(a.data());
        }
        self.push(
            Tensor::from_parts(vec![r, a.numel()], data),
            Op::BroadcastRows(self.id),
        )
    }

    /// Repeat a vector as `c` columns: `[r] -> [r, c]`.
    pub fn broadcast_cols(self, c: usize) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.rank(), 1);
        let data = a
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, c))
            .collect();
        self.push(
            Tensor::from_parts(vec![a.numel(), c], data),
            Op::BroadcastCols(self.id),
        )
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Var<'g> {
        let a = self.value();
        assert_eq!(a.numel(), 1);
        self.push(Tensor::full(shape, a.data()[0]), Op::Expand(self.id))
    }

    /// Contiguous range of the flattened values, as a vector.
    pub fn slice(self, start: usize, len: usize) -> Var<'g> {
        let a = self.value();
        assert!(start + len <= a.numel(), "slice out of range");
        self.push(
            Tensor::vector(a.data()[start..start + len].to_vec()),
            Op::Slice {
                src: self.id,
                start,
            },
        )
    }

    /// Embed a vector at `start` inside a zero vector of length `total`.
    pub fn pad(self, start: usize, total: usize) -> Var<'g> {
        let a = self.value();
        assert!(start + a.numel() <= total);
        let mut data = vec![0.0; total];
        data[start..start + a.numel()].copy_from_slice(a.data());
        self.push(Tensor::vector(data), Op::Pad { src: self.id, start })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let a = (*self.value()).clone();
        let v = a.reshape(shape.to_vec()).expect("reshape size mismatch");
        self.push(v, Op::Reshape(self.id))
    }

    /// Element `i` of the flattened values, as a one-element vector.
    pub fn at(self, i: usize) -> Var<'g> {
        self.slice(i, 1)
    }

    /// Row-wise log-softmax of a matrix (or of a vector).
    pub fn log_softmax(self) -> Var<'g> {
        let shape = self.shape();
        let x = if shape.len() == 1 {
            self.reshape(&[1, shape[0]])
        } else {
            self
        };
        let xv = x.value();
        let maxes: Vec<f64> = (0..xv.rows())
            .map(|i| xv.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let c = xv.cols();
        let m = self.graph.constant(Tensor::vector(maxes)).broadcast_cols(c);
        let shifted = x - m;
        let lse = shifted.exp().sum_cols().ln().broadcast_cols(c);
        let y = shifted - lse;
        if shape.len() == 1 {
            y.reshape(&shape)
        } else {
            y
        }
    }

    pub fn softmax(self) -> Var<'g> {
        self.log_softmax().exp()
    }

    /// ln σ(x) = −softplus(−x).
    pub fn log_sigmoid(self) -> Var<'g> {
        -(-self).softplus()
    }

    /// max(x, floor), with gradient passed through where x ≥ floor.
    pub fn clamp_min(self, floor: f64) -> Var<'g> {
        let v = self.value();
        if v.data().iter().all(|&x| x >= floor) {
            return self;
        }
        let mask = v.map(|x| if x >= floor { 1.0 } else { 0.0 });
        let fill = v.map(|x| if x >= floor { 0.0 } else { floor });
        let g = self.graph;
        self * g.constant(mask) + g.constant(fill)
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $op:ident, $f:expr) => {
        impl<'g> ops::$tr<Var<'g>> for Var<'g> {
            type Output = Var<'g>;
            fn $m(self, rhs: Var<'g>) -> Var<'g> {
                self.binary(rhs, $f, Op::$op(self.id, rhs.id))
            }
        }
    };
}

binop!(Add, add, Add, |a, b| a + b);
binop!(Sub, sub, Sub, |a, b| a - b);
binop!(Mul, mul, Mul, |a, b| a * b);
binop!(Div, div, Div, |a, b| a / b);

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.push(unary(&self.value(), |x| -x), Op::Neg(self.id))
    }
}

impl<'g> ops::Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, c: f64) -> Var<'g> {
        self.push(unary(&self.value(), |x| x * c), Op::MulScalar(self.id, c))
    }
}

impl<'g> ops::Div<f64> for Var<'g> {
    type Output = Var<'g>;
    fn div(self, c: f64) -> Var<'g> {
        self * (1.0 / c)
    }
}

impl<'g> ops::Add<f64> for Var<'g> {
    type Output = Var<'g>;
    fn add(self, c: f64) -> Var<'g> {
        self.push(unary(&self.value(), |x| x + c), Op::AddScalar(self.id))
    }
}

impl<'g> ops::Sub<f64> for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, c: f64) -> Var<'g> {
        self + (-c)
    }
}

impl<'g> ops::Sub<Var<'g>> for f64 {
    type Output = Var<'g>;
    fn sub(self, v: Var<'g>) -> Var<'g> {
        (-v) + self
    }
}

impl<'g> ops::Mul<Var<'g>> for f64 {
    type Output = Var<'g>;
    fn mul(self, v: Var<'g>) -> Var<'g> {
        v * self
    }
}
