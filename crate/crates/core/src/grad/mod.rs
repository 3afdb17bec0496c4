//! Reverse-mode differentiation over real tensors.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep.
//! Complex quantities are carried as `(re, im)` pairs of real tensors, see
//! [`CVar`]; the loss is real, so differentiating with respect to both parts
//! is all that is needed.
//!
//! Binary element-wise ops broadcast like numpy. Shape errors in operator
//! sugar (`a + b`) panic; the `try_*` forms return [`Error::ShapeMismatch`].

mod complex;
mod gradcheck;
mod tensor;

use std::cell::{Ref, RefCell};

pub use complex::CVar;
pub use gradcheck::gradcheck;
pub use tensor::{broadcast_shape, gemm, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Recip(usize),
    Log2(usize),
    Sqrt(usize),
    Powi(usize, i32),
    LeakyRelu(usize, f64),
    SumAxis(usize, usize),
    SumAll(usize),
    Reshape(usize),
    Diag(usize),
    Select(usize, usize),
    Linear(usize, usize),
    BatchMatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Operation record for one forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Adjoints of every node after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when `v` does not influence the
    /// output or is a constant.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Back-propagates from the scalar `out`.
    pub fn backward(&self, out: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[out.id].value;
        if root.numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.id + 1];
        grads[out.id] = Some(Tensor::full(&root.shape, 1.0));

        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let mut send = |i: usize, t: Tensor| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    send(a, g.reduce_to(&val(a).shape));
                    send(b, g.reduce_to(&val(b).shape));
                }
                Op::Sub(a, b) => {
                    send(a, g.reduce_to(&val(a).shape));
                    send(b, g.map(|x| -x).reduce_to(&val(b).shape));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    if nodes[a].needs_grad {
                        send(
                            a,
                            Tensor::zip_broadcast(&g, vb, |x, y| x * y).reduce_to(&va.shape),
                        );
                    }
                    if nodes[b].needs_grad {
                        send(
                            b,
                            Tensor::zip_broadcast(&g, va, |x, y| x * y).reduce_to(&vb.shape),
                        );
                    }
                }
                Op::Scale(a, c) => send(a, g.map(|x| x * c)),
                Op::AddScalar(a) => send(a, g),
                Op::Recip(a) => send(a, g.zip(&node.value, |gi, y| -gi * y * y)),
                Op::Log2(a) => send(a, g.zip(val(a), |gi, x| gi / (x * std::f64::consts::LN_2))),
                Op::Sqrt(a) => send(a, g.zip(&node.value, |gi, y| gi * 0.5 / y)),
                Op::Powi(a, n) => send(a, g.zip(val(a), |gi, x| gi * n as f64 * x.powi(n - 1))),
                Op::LeakyRelu(a, slope) => send(
                    a,
                    g.zip(val(a), |gi, x| if x > 0.0 { gi } else { gi * slope }),
                ),
                Op::SumAxis(a, axis) => send(a, g.expand_axis(&val(a).shape, axis)),
                Op::SumAll(a) => send(a, Tensor::full(&val(a).shape, g.data[0])),
                Op::Reshape(a) => send(a, g.reshaped(&val(a).shape)),
                Op::Diag(a) => send(a, g.diag_embed()),
                Op::Select(a, index) => send(a, g.unselect_last(&val(a).shape, index)),
                Op::Linear(x, w) => {
                    let (vx, vw) = (val(x), val(w));
                    let (din, dout) = (vw.shape[0], vw.shape[1]);
                    let rows = vx.numel() / din;
                    if nodes[x].needs_grad {
                        let mut gx = Tensor::zeros(&vx.shape);
                        gemm(
                            rows,
                            dout,
                            din,
                            &g.data,
                            false,
                            &vw.data,
                            true,
                            &mut gx.data,
                            false,
                        );
                        send(x, gx);
                    }
                    if nodes[w].needs_grad {
                        let mut gw = Tensor::zeros(&vw.shape);
                        gemm(
                            din,
                            rows,
                            dout,
                            &vx.data,
                            true,
                            &g.data,
                            false,
                            &mut gw.data,
                            false,
                        );
                        send(w, gw);
                    }
                }
                Op::BatchMatMul { a, b, ta, tb } => {
                    let (va, vb) = (val(a), val(b));
                    if nodes[a].needs_grad {
                        let ga = if ta {
                            Tensor::bmm(vb, tb, &g, true)
                        } else {
                            Tensor::bmm(&g, false, vb, !tb)
                        };
                        send(a, ga);
                    }
                    if nodes[b].needs_grad {
                        let gb = if tb {
                            Tensor::bmm(&g, true, va, ta)
                        } else {
                            Tensor::bmm(va, !ta, &g, false)
                        };
                        send(b, gb);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Snapshot of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape.clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.tape.value(self.id);
        assert_eq!(v.numel(), 1, "item() on a tensor of shape {:?}", v.shape);
        v.data[0]
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn unary(self, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var<'t> {
        let value = f(&self.tape.value(self.id));
        self.tape.push(op, value, self.needs_grad())
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            broadcast_shape(&a.shape, &b.shape)?;
            Tensor::zip_broadcast(&a, &b, f)
        };
        let needs = self.needs_grad() || other.needs_grad();
        Ok(self.tape.push(op, value, needs))
    }

    pub fn try_add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn try_sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn try_mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |t| t.map(|x| x * c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |t| t.map(|x| x + c))
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id), |t| t.map(|x| 1.0 / x))
    }

    pub fn log2(self) -> Var<'t> {
        self.unary(Op::Log2(self.id), |t| t.map(f64::log2))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |t| t.map(f64::sqrt))
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        self.unary(Op::Powi(self.id, n), |t| t.map(|x| x.powi(n)))
    }

    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |t| {
            t.map(|x| if x > 0.0 { x } else { slope * x })
        })
    }

    /// Sum over `axis`, keeping it as a length-one dimension.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        self.unary(Op::SumAxis(self.id, axis), |t| t.sum_axis(axis))
    }

    pub fn mean_axis(self, axis: usize) -> Var<'t> {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::SumAll(self.id), |t| Tensor::scalar(t.data.iter().sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.tape.value(self.id).numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        self.try_reshape(shape).expect("reshape")
    }

    pub fn try_reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let numel = self.tape.value(self.id).numel();
        if shape.iter().product::<usize>() != numel {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(self.unary(Op::Reshape(self.id), |t| t.reshaped(shape)))
    }

    /// Diagonal of the trailing square matrices, `[.., n, n] -> [.., n]`.
    pub fn diag(self) -> Var<'t> {
        self.unary(Op::Diag(self.id), Tensor::diag)
    }

    /// Slice `index` of the last axis, dropping that axis.
    pub fn select_last(self, index: usize) -> Var<'t> {
        self.unary(Op::Select(self.id, index), |t| t.select_last(index))
    }

    /// `x · w` applied to the last axis of `self`, with `w` of shape
    /// `[d_in, d_out]`.
    pub fn linear(self, w: Var<'t>) -> Var<'t> {
        self.try_linear(w).expect("linear")
    }

    pub fn try_linear(self, w: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let wv = self.tape.value(w.id);
            if wv.shape.len() != 2 || x.shape.last() != Some(&wv.shape[0]) {
                return Err(Error::ShapeMismatch(format!(
                    "linear: input {:?} with weight {:?}",
                    x.shape, wv.shape
                )));
            }
            let (din, dout) = (wv.shape[0], wv.shape[1]);
            let rows = x.numel() / din;
            let mut shape = x.shape.clone();
            *shape.last_mut().unwrap() = dout;
            let mut out = Tensor::zeros(&shape);
            gemm(
                rows,
                din,
                dout,
                &x.data,
                false,
                &wv.data,
                false,
                &mut out.data,
                false,
            );
            out
        };
        let needs = self.needs_grad() || w.needs_grad();
        Ok(self.tape.push(Op::Linear(self.id, w.id), value, needs))
    }

    /// Batched `op(a) · op(b)` over matching leading dimensions, where
    /// `op` transposes the trailing two axes when the flag is set.
    pub fn bmm(self, ta: bool, other: Var<'t>, tb: bool) -> Var<'t> {
        self.try_bmm(ta, other, tb).expect("bmm")
    }

    pub fn try_bmm(self, ta: bool, other: Var<'t>, tb: bool) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            Tensor::check_bmm(&a.shape, ta, &b.shape, tb)?;
            Tensor::bmm(&a, ta, &b, tb)
        };
        let needs = self.needs_grad() || other.needs_grad();
        let op = Op::BatchMatMul {
            a: self.id,
            b: other.id,
            ta,
            tb,
        };
        Ok(self.tape.push(op, value, needs))
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.try_add(rhs).expect("add")
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.try_sub(rhs).expect("sub")
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.try_mul(rhs).expect("mul")
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests;
