//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! The backward pass is itself recorded as ordinary tape operations, so the
//! gradients returned by [`Tape::grad`] are differentiable [`Var`]s. Calling
//! `grad` on an expression built from earlier gradients yields exact
//! second-order derivatives (reverse-over-reverse), which is what the
//! meta-gradient through an inner SGD step needs.
//!
//! ```
//! use egn_core::tape::Tape;
//! use egn_core::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(2.0));
//! let y = tape.mul(tape.mul(x, x), x); // x^3
//! let dy = tape.grad(y, &[x]).unwrap()[0];
//! assert_eq!(tape.item(dy), 12.0);
//! let d2y = tape.grad(dy, &[x]).unwrap()[0];
//! assert_eq!(tape.item(d2y), 12.0);
//! ```

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op<'g> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`; only the scale matters for the adjoint.
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    /// Row `v` of the output is the sum of rows `u` over neighbors of `v`.
    NeighborSum(Var, &'g Graph),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    /// `1 x 1` to `rows x cols`.
    BroadcastScalar(Var),
    SumRows(Var),
    /// `1 x d` to `rows x d`.
    BroadcastRows(Var),
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
    requires_grad: bool,
}

/// Single-threaded recording tape. Graph references captured by
/// neighbor-sum nodes must outlive the tape.
#[derive(Default)]
pub struct Tape<'g> {
    nodes: RefCell<Vec<Node<'g>>>,
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op<'g>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant copy of `v`'s current value (stop-gradient).
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn unary(&self, a: Var, op: Op<'g>, f: impl FnOnce(&Tensor) -> Tensor) -> Var {
        let value = f(&self.value(a));
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op<'g>,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    fn assert_same_shape(&self, a: Var, b: Var, op: &str) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa == sb, "{op}: shape {sa:?} vs {sb:?}");
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        self.binary(a, b, Op::Add(a, b), |x, y| x.zip_map(y, |p, q| p + q))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        self.binary(a, b, Op::Sub(a, b), |x, y| x.zip_map(y, |p, q| p - q))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        self.binary(a, b, Op::Mul(a, b), |x, y| x.zip_map(y, |p, q| p * q))
    }

    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, Op::Affine(a, scale), |x| x.map(|v| scale * v + shift))
    }

    pub fn scale(&self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.1 == sb.0, "matmul: shape {sa:?} x {sb:?}");
        self.binary(a, b, Op::MatMul(a, b), |x, y| x.matmul(y))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a), |x| x.transpose())
    }

    /// Sums neighbor rows: `out[v] = sum_{u in N(v)} x[u]`.
    pub fn neighbor_sum(&self, a: Var, g: &'g Graph) -> Var {
        assert_eq!(
            self.shape(a).0,
            g.node_count(),
            "neighbor_sum: row count vs node count"
        );
        self.unary(a, Op::NeighborSum(a, g), |x| {
            let cols = x.cols();
            let mut out = Tensor::zeros(x.rows(), cols);
            let src = x.data();
            let dst = out.data_mut();
            for v in 0..g.node_count() {
                let row = &mut dst[v * cols..(v + 1) * cols];
                for &u in g.neighbors(v) {
                    for (o, &s) in row.iter_mut().zip(&src[u * cols..(u + 1) * cols]) {
                        *o += s;
                    }
                }
            }
            out
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.map(|v| v.max(0.0)))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| x.map(sigmoid))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::Sum(a), |x| Tensor::scalar(x.sum()))
    }

    pub fn broadcast_scalar(&self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.shape(a), (1, 1), "broadcast_scalar needs a 1x1 input");
        self.unary(a, Op::BroadcastScalar(a), |x| {
            Tensor::filled(rows, cols, x.item())
        })
    }

    pub fn sum_rows(&self, a: Var) -> Var {
        self.unary(a, Op::SumRows(a), |x| x.sum_rows())
    }

    pub fn broadcast_rows(&self, a: Var, rows: usize) -> Var {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows needs a 1xd input");
        self.unary(a, Op::BroadcastRows(a), |x| x.broadcast_rows(rows))
    }

    /// `x W + 1 b` for an `n x d` input, `d x h` weight and `1 x h` bias.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let rows = self.shape(x).0;
        let xw = self.matmul(x, w);
        let bb = self.broadcast_rows(b, rows);
        self.add(xw, bb)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The backward computation is recorded on this tape, so every returned
    /// gradient can itself be differentiated. A parameter the output does not
    /// depend on gets a zero constant of matching shape.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut adjoint: Vec<Option<Var>> = vec![None; output.0 + 1];
        if !self.needs(&[output]) {
            return Ok(wrt.iter().map(|&w| self.zeros_like(w)).collect());
        }
        adjoint[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        let lowest = wrt.iter().map(|w| w.0).min().unwrap_or(0);

        for k in (lowest..=output.0).rev() {
            let Some(dy) = adjoint[k] else { continue };
            let op = self.nodes.borrow()[k].op;
            let y = Var(k);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, || dy);
                    self.accumulate(&mut adjoint, b, || dy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, || dy);
                    self.accumulate(&mut adjoint, b, || self.scale(dy, -1.0));
                }
                Op::Mul(a, b) => {
                    self.accumulate(&mut adjoint, a, || self.mul(dy, b));
                    self.accumulate(&mut adjoint, b, || self.mul(dy, a));
                }
                Op::Affine(a, s) => {
                    self.accumulate(&mut adjoint, a, || self.scale(dy, s));
                }
                Op::MatMul(a, b) => {
                    self.accumulate(&mut adjoint, a, || {
                        let bt = self.transpose(b);
                        self.matmul(dy, bt)
                    });
                    self.accumulate(&mut adjoint, b, || {
                        let at = self.transpose(a);
                        self.matmul(at, dy)
                    });
                }
                Op::Transpose(a) => {
                    self.accumulate(&mut adjoint, a, || self.transpose(dy));
                }
                Op::NeighborSum(a, g) => {
                    // the adjacency operator is symmetric
                    self.accumulate(&mut adjoint, a, || self.neighbor_sum(dy, g));
                }
                Op::Relu(a) => {
                    self.accumulate(&mut adjoint, a, || {
                        let mask = self.value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        let mask = self.constant(mask);
                        self.mul(dy, mask)
                    });
                }
                Op::Sigmoid(a) => {
                    self.accumulate(&mut adjoint, a, || {
                        let one_minus = self.affine(y, -1.0, 1.0);
                        let slope = self.mul(y, one_minus);
                        self.mul(dy, slope)
                    });
                }
                Op::Sum(a) => {
                    self.accumulate(&mut adjoint, a, || {
                        let (r, c) = self.shape(a);
                        self.broadcast_scalar(dy, r, c)
                    });
                }
                Op::BroadcastScalar(a) => {
                    self.accumulate(&mut adjoint, a, || self.sum(dy));
                }
                Op::SumRows(a) => {
                    self.accumulate(&mut adjoint, a, || {
                        let r = self.shape(a).0;
                        self.broadcast_rows(dy, r)
                    });
                }
                Op::BroadcastRows(a) => {
                    self.accumulate(&mut adjoint, a, || self.sum_rows(dy));
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.zeros_like(w),
            })
            .collect())
    }

    fn accumulate(
        &self,
        adjoint: &mut [Option<Var>],
        target: Var,
        contribution: impl FnOnce() -> Var,
    ) {
        if !self.nodes.borrow()[target.0].requires_grad {
            return;
        }
        let c = contribution();
        adjoint[target.0] = Some(match adjoint[target.0] {
            Some(prev) => self.add(prev, c),
            None => c,
        });
    }

    fn zeros_like(&self, v: Var) -> Var {
        let (r, c) = self.shape(v);
        self.constant(Tensor::zeros(r, c))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
