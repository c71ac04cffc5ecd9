//! Recorded compute graph and reverse-mode backward pass.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! appended in execution order, so the vector itself is a topological order
//! and `backward` is a single reverse scan: each node is visited exactly
//! once, takes its accumulated output gradient, and adds contributions to
//! its inputs. Leaf gradients stay behind for the caller.
//!
//! One tape serves one forward/backward round; training code builds a fresh
//! tape per batch and drops it afterwards. Vars are cheap copyable handles
//! and carry the id of their tape, so using a var with the wrong tape is an
//! error rather than silent garbage.

use std::sync::atomic::{AtomicU64, Ordering};

use super::ops;
pub use super::ops::ReduceKind;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var {
    index: usize,
    tape: u64,
}

enum Op<F: Scalar> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    // The constant offset never appears in the backward pass.
    Affine { x: usize, a: F },
    Relu(usize),
    Sigmoid(usize),
    Reshape(usize),
    ConcatChannels(usize, usize),
    Conv2d { input: usize, weight: usize, bias: usize, stride: usize },
    Linear { input: usize, weight: usize, bias: usize },
    Softmax { x: usize, axis: usize },
    Reduce { x: usize, kind: ReduceKind, axis: Option<usize> },
    Squash(usize),
    CapsuleTransform { u: usize, w: usize },
    CoupledSum { uhat: usize, couplings: Tensor<F> },
    NormLastAxis(usize),
    SelectCapsule { x: usize, indices: Vec<usize> },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    requires_grad: bool,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    id: u64,
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Option<Tensor<F>>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a gradient-requiring input (parameters, probed activations).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Record a constant input; no gradient will be produced for it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    /// Value computed at `v`. Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor<F> {
        assert_eq!(v.tape, self.id, "var used with a foreign tape");
        &self.nodes[v.index].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if one was produced.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        assert_eq!(v.tape, self.id, "var used with a foreign tape");
        self.grads.as_ref()?.get(v.index)?.as_ref()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::TapeMismatch);
        }
        Ok(v.index)
    }

    fn requires(&self, index: usize) -> bool {
        self.nodes[index].requires_grad
    }

    fn push_unchecked(&mut self, op: Op<F>, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn push(&mut self, name: &'static str, op: Op<F>, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o += v;
        }
        let rg = self.requires(ia) || self.requires(ib);
        self.push("add", Op::Add(ia, ib), out, rg)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= v;
        }
        let rg = self.requires(ia) || self.requires(ib);
        self.push("mul", Op::Mul(ia, ib), out, rg)
    }

    /// Elementwise `a*x + b` with scalar constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let (fa, fb) = (F::from_f64(a), F::from_f64(b));
        let mut out = self.nodes[ix].value.clone();
        for v in out.data_mut() {
            *v = fa * *v + fb;
        }
        let rg = self.requires(ix);
        self.push("affine", Op::Affine { x: ix, a: fa }, out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg_b = self.affine(b, -1.0, 0.0)?;
        self.add(a, neg_b)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let mut out = self.nodes[ix].value.clone();
        for v in out.data_mut() {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let rg = self.requires(ix);
        self.push("relu", Op::Relu(ix), out, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let mut out = self.nodes[ix].value.clone();
        for v in out.data_mut() {
            *v = F::one() / (F::one() + (-*v).exp());
        }
        let rg = self.requires(ix);
        self.push("sigmoid", Op::Sigmoid(ix), out, rg)
    }

    pub fn reshape(&mut self, x: Var, new_shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.reshaped(new_shape)?;
        let rg = self.requires(ix);
        self.push("reshape", Op::Reshape(ix), out, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.rank() != 4 || tb.rank() != 4 {
            return Err(Error::Shape {
                op: "concat_channels",
                detail: format!("need rank-4 operands, got {:?} and {:?}", ta.shape(), tb.shape()),
            });
        }
        for (axis, name) in [(0usize, "batch (axis 0)"), (2, "height (axis 2)"), (3, "width (axis 3)")] {
            if ta.shape()[axis] != tb.shape()[axis] {
                return Err(Error::Shape {
                    op: "concat_channels",
                    detail: format!("{name}: {} vs {}", ta.shape()[axis], tb.shape()[axis]),
                });
            }
        }
        let out = ops::concat_channels_forward(ta, tb);
        let rg = self.requires(ia) || self.requires(ib);
        self.push("concat_channels", Op::ConcatChannels(ia, ib), out, rg)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (ii, iw, ib) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        let (ti, tw, tb) = (&self.nodes[ii].value, &self.nodes[iw].value, &self.nodes[ib].value);
        if ti.rank() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("input must be [N,C,H,W], got {:?}", ti.shape()),
            });
        }
        if tw.rank() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("weight must be [O,C,kH,kW], got {:?}", tw.shape()),
            });
        }
        if ti.shape()[1] != tw.shape()[1] {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "channels (axis 1): input has {}, weight expects {}",
                    ti.shape()[1],
                    tw.shape()[1]
                ),
            });
        }
        if tb.rank() != 1 || tb.numel() != tw.shape()[0] {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "bias (axis 0): got {:?}, weight has {} output channels",
                    tb.shape(),
                    tw.shape()[0]
                ),
            });
        }
        if stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let out = ops::conv2d_forward(ti, tw, tb, stride);
        let rg = self.requires(ii) || self.requires(iw) || self.requires(ib);
        self.push(
            "conv2d",
            Op::Conv2d { input: ii, weight: iw, bias: ib, stride },
            out,
            rg,
        )
    }

    /// Fully-connected layer: x[N,I] · W[O,I]ᵀ + b[O].
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (ii, iw, ib) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        let (ti, tw, tb) = (&self.nodes[ii].value, &self.nodes[iw].value, &self.nodes[ib].value);
        if ti.rank() != 2 || tw.rank() != 2 {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("need [N,I] and [O,I], got {:?} and {:?}", ti.shape(), tw.shape()),
            });
        }
        if ti.shape()[1] != tw.shape()[1] {
            return Err(Error::Shape {
                op: "linear",
                detail: format!(
                    "inner dim (axis 1): input has {}, weight expects {}",
                    ti.shape()[1],
                    tw.shape()[1]
                ),
            });
        }
        if tb.rank() != 1 || tb.numel() != tw.shape()[0] {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("bias {:?} vs {} output rows", tb.shape(), tw.shape()[0]),
            });
        }
        let out = ops::linear_forward(ti, tw, tb);
        let rg = self.requires(ii) || self.requires(iw) || self.requires(ib);
        self.push(
            "linear",
            Op::Linear { input: ii, weight: iw, bias: ib },
            out,
            rg,
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = &self.nodes[ix].value;
        if axis >= t.rank() {
            return Err(Error::InvalidAxis { op: "softmax", axis, rank: t.rank() });
        }
        let out = ops::softmax_forward(t, axis);
        let rg = self.requires(ix);
        self.push("softmax", Op::Softmax { x: ix, axis }, out, rg)
    }

    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let ix = self.check(x)?;
        let t = &self.nodes[ix].value;
        if let Some(a) = axis {
            if a >= t.rank() {
                return Err(Error::InvalidAxis { op: "reduce", axis: a, rank: t.rank() });
            }
        }
        let out = ops::reduce_forward(t, kind, axis);
        let rg = self.requires(ix);
        self.push("reduce", Op::Reduce { x: ix, kind, axis }, out, rg)
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::Sum, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::Mean, axis)
    }

    /// Sum of squared elements (no square root).
    pub fn sq_l2_norm(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::SqL2Norm, axis)
    }

    /// Capsule squash along the last axis.
    pub fn squash(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = &self.nodes[ix].value;
        if t.rank() == 0 {
            return Err(Error::Shape {
                op: "squash",
                detail: "needs at least one axis".into(),
            });
        }
        let out = ops::squash_forward(t);
        let rg = self.requires(ix);
        self.push("squash", Op::Squash(ix), out, rg)
    }

    /// û[n,p,j,:] = W[j]·u[n,p,:] for u: [N,P,Din], w: [J,Dout,Din].
    pub fn capsule_transform(&mut self, u: Var, w: Var) -> Result<Var> {
        let (iu, iw) = (self.check(u)?, self.check(w)?);
        let (tu, tw) = (&self.nodes[iu].value, &self.nodes[iw].value);
        if tu.rank() != 3 || tw.rank() != 3 {
            return Err(Error::Shape {
                op: "capsule_transform",
                detail: format!("need [N,P,Din] and [J,Dout,Din], got {:?} and {:?}", tu.shape(), tw.shape()),
            });
        }
        if tu.shape()[2] != tw.shape()[2] {
            return Err(Error::Shape {
                op: "capsule_transform",
                detail: format!(
                    "input capsule dim (axis 2): u has {}, w expects {}",
                    tu.shape()[2],
                    tw.shape()[2]
                ),
            });
        }
        let out = ops::capsule_transform_forward(tu, tw);
        let rg = self.requires(iu) || self.requires(iw);
        self.push("capsule_transform", Op::CapsuleTransform { u: iu, w: iw }, out, rg)
    }

    /// s[n,j,:] = Σ_p c[n,p,j]·û[n,p,j,:] with `couplings` treated as a
    /// constant: routing coefficients are not trained and gradients flow
    /// only into û.
    pub fn coupled_sum(&mut self, uhat: Var, couplings: Tensor<F>) -> Result<Var> {
        let iu = self.check(uhat)?;
        let tu = &self.nodes[iu].value;
        if tu.rank() != 4 {
            return Err(Error::Shape {
                op: "coupled_sum",
                detail: format!("û must be [N,P,J,D], got {:?}", tu.shape()),
            });
        }
        if couplings.shape() != &tu.shape()[..3] {
            return Err(Error::Shape {
                op: "coupled_sum",
                detail: format!(
                    "couplings {:?} vs û leading axes {:?}",
                    couplings.shape(),
                    &tu.shape()[..3]
                ),
            });
        }
        let out = ops::coupled_sum_forward(tu, &couplings);
        let rg = self.requires(iu);
        self.push("coupled_sum", Op::CoupledSum { uhat: iu, couplings }, out, rg)
    }

    /// Euclidean norm of each vector along the last axis; drops that axis.
    pub fn norm_last_axis(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = &self.nodes[ix].value;
        if t.rank() == 0 {
            return Err(Error::Shape {
                op: "norm_last_axis",
                detail: "needs at least one axis".into(),
            });
        }
        let out = ops::norm_last_axis_forward(t);
        let rg = self.requires(ix);
        self.push("norm_last_axis", Op::NormLastAxis(ix), out, rg)
    }

    /// out[n,:] = x[n, indices[n], :] for x: [N,J,D].
    pub fn select_capsule(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let t = &self.nodes[ix].value;
        if t.rank() != 3 {
            return Err(Error::Shape {
                op: "select_capsule",
                detail: format!("need [N,J,D], got {:?}", t.shape()),
            });
        }
        if indices.len() != t.shape()[0] {
            return Err(Error::Shape {
                op: "select_capsule",
                detail: format!("{} indices for batch of {}", indices.len(), t.shape()[0]),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= t.shape()[1]) {
            return Err(Error::Shape {
                op: "select_capsule",
                detail: format!("capsule index {} out of range (axis 1 has {})", bad, t.shape()[1]),
            });
        }
        let out = ops::select_capsule_forward(t, indices);
        let rg = self.requires(ix);
        self.push(
            "select_capsule",
            Op::SelectCapsule { x: ix, indices: indices.to_vec() },
            out,
            rg,
        )
    }

    /// Populate gradients of every gradient-requiring leaf reachable from
    /// `loss`. One reverse scan; each node's output gradient is consumed as
    /// soon as the node is processed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        let numel = self.nodes[il].value.numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        if !self.nodes[il].requires_grad {
            return Err(Error::DetachedLoss);
        }
        if self.grads.is_some() {
            return Err(Error::BackwardAlreadyRun);
        }

        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::full(self.nodes[il].value.shape().to_vec(), F::one()));

        let nodes = &self.nodes;
        let accum = |slot: &mut Option<Tensor<F>>, contrib: Tensor<F>| match slot {
            None => *slot = Some(contrib),
            Some(t) => {
                for (o, &v) in t.data_mut().iter_mut().zip(contrib.data()) {
                    *o += v;
                }
            }
        };

        for i in (0..=il).rev() {
            if !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if nodes[*a].requires_grad {
                        accum(&mut grads[*a], g.clone());
                    }
                    if nodes[*b].requires_grad {
                        accum(&mut grads[*b], g);
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[*a].requires_grad {
                        let mut ga = g.clone();
                        for (o, &v) in ga.data_mut().iter_mut().zip(nodes[*b].value.data()) {
                            *o *= v;
                        }
                        accum(&mut grads[*a], ga);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = g;
                        for (o, &v) in gb.data_mut().iter_mut().zip(nodes[*a].value.data()) {
                            *o *= v;
                        }
                        accum(&mut grads[*b], gb);
                    }
                }
                Op::Affine { x, a } => {
                    let mut gx = g;
                    for v in gx.data_mut() {
                        *v *= *a;
                    }
                    accum(&mut grads[*x], gx);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (o, &v) in gx.data_mut().iter_mut().zip(nodes[*x].value.data()) {
                        if v <= F::zero() {
                            *o = F::zero();
                        }
                    }
                    accum(&mut grads[*x], gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (o, &y) in gx.data_mut().iter_mut().zip(nodes[i].value.data()) {
                        *o *= y * (F::one() - y);
                    }
                    accum(&mut grads[*x], gx);
                }
                Op::Reshape(x) => {
                    let gx = g.reshaped(nodes[*x].value.shape().to_vec())?;
                    accum(&mut grads[*x], gx);
                }
                Op::ConcatChannels(a, b) => {
                    let (ga, gb) = ops::concat_channels_backward(
                        nodes[*a].value.shape(),
                        nodes[*b].value.shape(),
                        &g,
                    );
                    if nodes[*a].requires_grad {
                        accum(&mut grads[*a], ga);
                    }
                    if nodes[*b].requires_grad {
                        accum(&mut grads[*b], gb);
                    }
                }
                Op::Conv2d { input, weight, bias, stride } => {
                    let (gi, gw, gb) = ops::conv2d_backward(
                        &nodes[*input].value,
                        &nodes[*weight].value,
                        *stride,
                        &g,
                        nodes[*input].requires_grad,
                    );
                    if let Some(gi) = gi {
                        accum(&mut grads[*input], gi);
                    }
                    if nodes[*weight].requires_grad {
                        accum(&mut grads[*weight], gw);
                    }
                    if nodes[*bias].requires_grad {
                        accum(&mut grads[*bias], gb);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let (gi, gw, gb) = ops::linear_backward(
                        &nodes[*input].value,
                        &nodes[*weight].value,
                        &g,
                        nodes[*input].requires_grad,
                    );
                    if let Some(gi) = gi {
                        accum(&mut grads[*input], gi);
                    }
                    if nodes[*weight].requires_grad {
                        accum(&mut grads[*weight], gw);
                    }
                    if nodes[*bias].requires_grad {
                        accum(&mut grads[*bias], gb);
                    }
                }
                Op::Softmax { x, axis } => {
                    let gx = ops::softmax_backward(&nodes[i].value, &g, *axis);
                    accum(&mut grads[*x], gx);
                }
                Op::Reduce { x, kind, axis } => {
                    let gx = ops::reduce_backward(&nodes[*x].value, *kind, *axis, &g);
                    accum(&mut grads[*x], gx);
                }
                Op::Squash(x) => {
                    let gx = ops::squash_backward(&nodes[*x].value, &g);
                    accum(&mut grads[*x], gx);
                }
                Op::CapsuleTransform { u, w } => {
                    let (gu, gw) = ops::capsule_transform_backward(
                        &nodes[*u].value,
                        &nodes[*w].value,
                        &g,
                        nodes[*u].requires_grad,
                    );
                    if let Some(gu) = gu {
                        accum(&mut grads[*u], gu);
                    }
                    if nodes[*w].requires_grad {
                        accum(&mut grads[*w], gw);
                    }
                }
                Op::CoupledSum { uhat, couplings } => {
                    let gu = ops::coupled_sum_backward(nodes[*uhat].value.shape(), couplings, &g);
                    accum(&mut grads[*uhat], gu);
                }
                Op::NormLastAxis(x) => {
                    let gx = ops::norm_last_axis_backward(&nodes[*x].value, &nodes[i].value, &g);
                    accum(&mut grads[*x], gx);
                }
                Op::SelectCapsule { x, indices } => {
                    let gx = ops::select_capsule_backward(nodes[*x].value.shape(), indices, &g);
                    accum(&mut grads[*x], gx);
                }
            }
        }

        self.grads = Some(grads);
        Ok(())
    }
}
