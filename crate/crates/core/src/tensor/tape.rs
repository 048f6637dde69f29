use std::fmt;

use super::kernels::{self, ConvGeom};
use super::{Backend, ParamGrads, ParamId, ParamStore, PoolMode, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Full-shape operand, broadcast operand, combined values and, when one side
/// was expanded, the broadcast source index of every output element.
type BroadcastParts = (Var, Var, Vec<f64>, Option<Vec<usize>>);

/// Operation kinds, used to label nodes in diagnostics and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Relu,
    Sigmoid,
    PoolSpatial,
    PoolChannel,
    Concat,
    Slice,
    Add,
    Mul,
    MseLoss,
    Sum,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::PoolSpatial,
        OpKind::PoolChannel,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Add,
        OpKind::Mul,
        OpKind::MseLoss,
        OpKind::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::PoolSpatial => "pool_spatial",
            OpKind::PoolChannel => "pool_channel",
            OpKind::Concat => "concat_channels",
            OpKind::Slice => "slice_channels",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::MseLoss => "mse_loss",
            OpKind::Sum => "sum",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    PoolSpatial {
        x: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    PoolChannel {
        x: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    /// `b` is broadcast over `a` when `bidx` is present.
    Add {
        a: Var,
        b: Var,
        bidx: Option<Vec<usize>>,
    },
    Mul {
        a: Var,
        b: Var,
        bidx: Option<Vec<usize>>,
    },
    MseLoss {
        pred: Var,
        target: Var,
        n_images: usize,
    },
    Sum(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::PoolSpatial { .. } => OpKind::PoolSpatial,
            Op::PoolChannel { .. } => OpKind::PoolChannel,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::MseLoss { .. } => OpKind::MseLoss,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A Wengert list: every forward operation appends a node holding its output
/// value, and [`Tape::backward`] walks the list in reverse.
///
/// A tape is single-use. Values recorded on it are immutable; build a fresh
/// tape for each forward pass.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node>,
    store: Option<&'p ParamStore>,
    bound: Vec<Option<Var>>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar root with respect to every recorded node that
/// requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the root does not depend on `var` or `var` does not
    /// require gradients.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that resolves [`Backend::param`] against `store`. Each
    /// parameter becomes one leaf no matter how often it is used, so
    /// gradients from shared uses sum.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: vec![None; store.len()],
            fault: None,
        }
    }

    /// Corrupts the backward rule of one operation kind by scaling its
    /// input gradients by 1.5. Only useful for exercising gradient checks.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf carrying the tensor's value and `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.node(v).op.kind()
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// `(1 / (2N)) * Σ_n ‖target_n − pred_n‖²` with `N = n_images`.
    pub fn mse_loss(&mut self, pred: Var, target: Var, n_images: usize) -> Result<Var> {
        if self.shape_of(pred) != self.shape_of(target) {
            return Err(Error::shape(
                "mse_loss",
                "operands",
                format!("{:?} vs {:?}", self.shape_of(pred), self.shape_of(target)),
            ));
        }
        if n_images == 0 {
            return Err(Error::invalid("n_images", "must be at least 1"));
        }
        let sse = kernels::squared_error(self.value(pred), self.value(target));
        let loss = sse / (2.0 * n_images as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::MseLoss {
                pred,
                target,
                n_images,
            },
            rg,
        ))
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<BroadcastParts> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        let (full, part) = if sa == sb {
            let value = self
                .value(a)
                .iter()
                .zip(self.value(b))
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Ok((a, b, value, None));
        } else if kernels::broadcast_strides(op, &sa, &sb).is_ok() {
            (a, b)
        } else {
            (b, a)
        };
        let strides = kernels::broadcast_strides(op, self.shape_of(full), self.shape_of(part))?;
        let idx = kernels::broadcast_index(self.shape_of(full), &strides);
        let (fv, pv) = (self.value(full), self.value(part));
        let value = fv.iter().zip(&idx).map(|(&x, &i)| f(x, pv[i])).collect();
        Ok((full, part, value, Some(idx)))
    }

    /// Runs reverse-mode differentiation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self.node(root);
        if root_node.value.len() != 1 {
            return Err(Error::NonScalarRoot(root_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if root_node.requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else { continue };
            let node = &self.nodes[i];
            let scale = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            let mut send = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut lower[v.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contrib)
                        .for_each(|(a, c)| *a += scale * c),
                    slot @ None => {
                        *slot = Some(if scale == 1.0 {
                            contrib
                        } else {
                            contrib.iter().map(|c| scale * c).collect()
                        })
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    if self.rg(*input) {
                        send(*input, kernels::conv2d_backward_input(g, self.value(*weight), geom));
                    }
                    if self.rg(*weight) {
                        send(*weight, kernels::conv2d_backward_weight(g, self.value(*input), geom));
                    }
                    if self.rg(*bias) {
                        send(*bias, kernels::conv2d_backward_bias(g, geom));
                    }
                }
                Op::Relu(x) => send(*x, kernels::relu_backward(self.value(*x), g)),
                Op::Sigmoid(x) => send(*x, kernels::sigmoid_backward(&node.value, g)),
                Op::PoolSpatial { x, mode, argmax } => send(
                    *x,
                    kernels::pool_spatial_backward(g, self.shape_of(*x), *mode, argmax),
                ),
                Op::PoolChannel { x, mode, argmax } => send(
                    *x,
                    kernels::pool_channel_backward(g, self.shape_of(*x), *mode, argmax),
                ),
                Op::Concat(a, b) => {
                    let (ga, gb) =
                        kernels::concat_backward(g, self.shape_of(*a), self.shape_of(*b));
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Slice { x, start, len } => send(
                    *x,
                    kernels::slice_backward(g, self.shape_of(*x), *start, *len),
                ),
                Op::Add { a, b, bidx } => {
                    send(*a, g.to_vec());
                    match bidx {
                        None => send(*b, g.to_vec()),
                        Some(idx) => {
                            let mut gb = vec![0.0; self.value(*b).len()];
                            for (&j, &gv) in idx.iter().zip(g) {
                                gb[j] += gv;
                            }
                            send(*b, gb);
                        }
                    }
                }
                Op::Mul { a, b, bidx } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    match bidx {
                        None => {
                            if self.rg(*a) {
                                send(*a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                            }
                            if self.rg(*b) {
                                send(*b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                            }
                        }
                        Some(idx) => {
                            if self.rg(*a) {
                                send(*a, g.iter().zip(idx).map(|(g, &j)| g * bv[j]).collect());
                            }
                            if self.rg(*b) {
                                let mut gb = vec![0.0; bv.len()];
                                for ((&j, &gv), &x) in idx.iter().zip(g).zip(av) {
                                    gb[j] += gv * x;
                                }
                                send(*b, gb);
                            }
                        }
                    }
                }
                Op::MseLoss {
                    pred,
                    target,
                    n_images,
                } => {
                    let n = *n_images as f64;
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    if self.rg(*pred) {
                        send(*pred, pv.iter().zip(tv).map(|(p, t)| g[0] * (p - t) / n).collect());
                    }
                    if self.rg(*target) {
                        send(*target, pv.iter().zip(tv).map(|(p, t)| g[0] * (t - p) / n).collect());
                    }
                }
                Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()]),
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward pass returning the gradient of every bound parameter that
    /// the root depends on.
    pub fn backward_params(&self, root: Var) -> Result<ParamGrads> {
        let grads = self.backward(root)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let g = grads.wrt((*v)?)?;
                Some((ParamId(i), g.to_vec()))
            })
            .collect())
    }
}

impl Backend for Tape<'_> {
    type Value = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let store = self.store.expect("tape was built without a parameter store");
        let t = &store.get(id).tensor;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true);
        self.bound[id.0] = Some(v);
        v
    }

    fn shape(&self, v: &Var) -> Vec<usize> {
        self.shape_of(*v).to_vec()
    }

    fn conv2d(&mut self, input: &Var, weight: &Var, bias: &Var, pad: usize, stride: usize) -> Result<Var> {
        let (input, weight, bias) = (*input, *weight, *bias);
        let geom = ConvGeom::new(
            self.shape_of(input),
            self.shape_of(weight),
            self.shape_of(bias),
            pad,
            stride,
        )?;
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            &geom,
        );
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            geom.output_shape(),
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let value = kernels::relu(self.value(*x));
        let (shape, rg) = (self.shape_of(*x).to_vec(), self.rg(*x));
        self.push(shape, value, Op::Relu(*x), rg)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let value = kernels::sigmoid(self.value(*x));
        let (shape, rg) = (self.shape_of(*x).to_vec(), self.rg(*x));
        self.push(shape, value, Op::Sigmoid(*x), rg)
    }

    fn pool_spatial(&mut self, x: &Var, mode: PoolMode) -> Result<Var> {
        let shape = self.shape_of(*x).to_vec();
        let (value, argmax) = kernels::pool_spatial(self.value(*x), &shape, mode)?;
        let rg = self.rg(*x);
        Ok(self.push(
            vec![shape[0], shape[1], 1, 1],
            value,
            Op::PoolSpatial { x: *x, mode, argmax },
            rg,
        ))
    }

    fn pool_channel(&mut self, x: &Var, mode: PoolMode) -> Result<Var> {
        let shape = self.shape_of(*x).to_vec();
        let (value, argmax) = kernels::pool_channel(self.value(*x), &shape, mode)?;
        let rg = self.rg(*x);
        Ok(self.push(
            vec![shape[0], 1, shape[2], shape[3]],
            value,
            Op::PoolChannel { x: *x, mode, argmax },
            rg,
        ))
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let shape = kernels::concat_shape(self.shape_of(*a), self.shape_of(*b))?;
        let value = kernels::concat_channels(
            self.value(*a),
            self.shape_of(*a),
            self.value(*b),
            self.shape_of(*b),
        );
        let rg = self.rg(*a) || self.rg(*b);
        Ok(self.push(shape, value, Op::Concat(*a, *b), rg))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let shape = kernels::slice_shape(self.shape_of(*x), start, len)?;
        let value = kernels::slice_channels(self.value(*x), self.shape_of(*x), start, len);
        let rg = self.rg(*x);
        Ok(self.push(shape, value, Op::Slice { x: *x, start, len }, rg))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b, value, bidx) = self.elementwise("add", *a, *b, |x, y| x + y)?;
        let (shape, rg) = (self.shape_of(a).to_vec(), self.rg(a) || self.rg(b));
        Ok(self.push(shape, value, Op::Add { a, b, bidx }, rg))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b, value, bidx) = self.elementwise("mul", *a, *b, |x, y| x * y)?;
        let (shape, rg) = (self.shape_of(a).to_vec(), self.rg(a) || self.rg(b));
        Ok(self.push(shape, value, Op::Mul { a, b, bidx }, rg))
    }
}
