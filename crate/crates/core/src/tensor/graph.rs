//! Eagerly-evaluated computation graph with reverse-mode differentiation.
//!
//! Operations compute their result immediately and append an operation
//! record; creation order is therefore a topological order, and
//! [`Graph::backward`] walks it in exact reverse, accumulating adjoints
//! additively across fan-out. Each forward value and each finalized
//! gradient is probed for NaN/Inf and fails hard with the node's label.

use std::cell::RefCell;

use super::kernels::{self, ConvGeom};
use super::{Result, Tensor, TensorError};
use crate::num::{abs_sum_f64, Scalar};

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        relu: bool,
    },
    DwConv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    ConvT2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        k: usize,
        relu: bool,
    },
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
        relu: bool,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    ConcatChannels {
        parts: Vec<usize>,
    },
    GlobalAvgPool {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    SoftmaxXent {
        logits: usize,
        targets: Vec<usize>,
    },
    SigmoidBce {
        logits: usize,
        targets: Vec<T>,
    },
    SelectChannel {
        x: usize,
        classes: Vec<usize>,
    },
    ChannelMix {
        x: usize,
        w: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Sum {
        x: usize,
    },
}

struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    label: String,
}

/// Operation tape; create values with [`Graph::leaf`] and the methods on
/// [`Value`].
pub struct Graph<T: Scalar> {
    inner: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node in a [`Graph`].
pub struct Value<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Value<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Value").field("id", &self.id).finish()
    }
}

impl<T: Scalar> Clone for Value<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Scalar> Copy for Value<'_, T> {}

fn check_finite<T: Scalar>(label: &str, data: &[T]) -> Result<()> {
    if abs_sum_f64(data).is_finite() {
        Ok(())
    } else {
        Err(TensorError::NotFinite {
            context: label.to_string(),
        })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert a tensor as a leaf node. Its `requires_grad` flag decides
    /// whether gradients are accumulated for it.
    pub fn leaf(&self, t: Tensor<T>) -> Value<'_, T> {
        self.leaf_named("leaf", t)
    }

    pub fn leaf_named(&self, name: &str, t: Tensor<T>) -> Value<'_, T> {
        let mut nodes = self.inner.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
            shape: t.shape().to_vec(),
            value: t.into_data(),
            label: name.to_string(),
        });
        Value { graph: self, id }
    }

    /// Copy a node's current value out as a tensor.
    pub fn tensor(&self, v: Value<'_, T>) -> Tensor<T> {
        let nodes = self.inner.borrow();
        let n = &nodes[v.id];
        Tensor::new(&n.shape, n.value.clone()).expect("node values stay valid")
    }

    pub fn shape_of(&self, v: Value<'_, T>) -> Vec<usize> {
        self.inner.borrow()[v.id].shape.clone()
    }

    fn push(&self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, label: String) -> Result<usize> {
        check_finite(&label, &value)?;
        let mut nodes = self.inner.borrow_mut();
        let requires_grad = {
            let req = |id: &usize| nodes[*id].requires_grad;
            match &op {
                Op::Leaf => false,
                Op::Conv2d { x, w, b, .. } | Op::ConvT2d { x, w, b, .. } | Op::Dense { x, w, b, .. } => {
                    req(x) || req(w) || b.as_ref().map(req).unwrap_or(false)
                }
                Op::DwConv2d { x, w, .. } | Op::ChannelMix { x, w } => req(x) || req(w),
                Op::Add { a, b } | Op::Mul { a, b } => req(a) || req(b),
                Op::ConcatChannels { parts } => parts.iter().any(req),
                Op::Relu { x }
                | Op::Sigmoid { x }
                | Op::GlobalAvgPool { x }
                | Op::Softmax { x }
                | Op::SoftmaxXent { logits: x, .. }
                | Op::SigmoidBce { logits: x, .. }
                | Op::SelectChannel { x, .. }
                | Op::Scale { x, .. }
                | Op::Sum { x } => req(x),
            }
        };
        let id = nodes.len();
        nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
            label,
        });
        Ok(id)
    }

    /// Smallest |preactivation| over all standalone ReLU nodes, or `None`
    /// when the graph contains fused ReLUs whose preactivations are not
    /// recorded. Finite-difference checks require a margin here: a kink
    /// inside the probe step of a central difference invalidates it.
    pub fn relu_input_margin(&self) -> Option<f64> {
        let nodes = self.inner.borrow();
        let mut margin = f64::INFINITY;
        for n in nodes.iter() {
            match &n.op {
                Op::Relu { x } => {
                    for v in &nodes[*x].value {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::Conv2d { relu: true, .. }
                | Op::ConvT2d { relu: true, .. }
                | Op::Dense { relu: true, .. } => return None,
                _ => {}
            }
        }
        Some(margin)
    }

    /// Reverse-mode differentiation from a scalar loss node. Every
    /// gradient is accumulated in creation-reverse (topological) order;
    /// leaves that the loss does not reach simply keep no gradient and
    /// read back as zeros.
    pub fn backward(&self, loss: Value<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.inner.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                grads[id] = if matches!(nodes[id].op, Op::Leaf) {
                    grads[id].take()
                } else {
                    None
                };
                continue;
            }
            let gy = grads[id].take().unwrap();
            check_finite(&format!("grad of {}", nodes[id].label), &gy)?;
            if matches!(nodes[id].op, Op::Leaf) {
                grads[id] = Some(gy);
                continue;
            }
            let add_to = |tid: usize, delta: Vec<T>, grads: &mut Vec<Option<Vec<T>>>| {
                if !nodes[tid].requires_grad {
                    return;
                }
                match &mut grads[tid] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&delta) {
                            *a += *d;
                        }
                    }
                    slot => *slot = Some(delta),
                }
            };
            match &nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, geom, relu } => {
                    let gy = masked(&gy, &nodes[id].value, *relu);
                    let need_gx = nodes[*x].requires_grad;
                    let need_gb = b.map(|bid| nodes[bid].requires_grad).unwrap_or(false);
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        &nodes[*x].value,
                        &nodes[*w].value,
                        &gy,
                        geom,
                        need_gx,
                        need_gb,
                    );
                    if let Some(gx) = gx {
                        add_to(*x, gx, &mut grads);
                    }
                    add_to(*w, gw, &mut grads);
                    if let (Some(bid), Some(gb)) = (b, gb) {
                        add_to(*bid, gb, &mut grads);
                    }
                }
                Op::DwConv2d { x, w, geom } => {
                    let need_gx = nodes[*x].requires_grad;
                    let (gx, gw) =
                        kernels::dwconv2d_backward(&nodes[*x].value, &nodes[*w].value, &gy, geom, need_gx);
                    if let Some(gx) = gx {
                        add_to(*x, gx, &mut grads);
                    }
                    add_to(*w, gw, &mut grads);
                }
                Op::ConvT2d { x, w, b, k, relu } => {
                    let gy = masked(&gy, &nodes[id].value, *relu);
                    let xs = &nodes[*x].shape;
                    let ws = &nodes[*w].shape;
                    let need_gx = nodes[*x].requires_grad;
                    let need_gb = b.map(|bid| nodes[bid].requires_grad).unwrap_or(false);
                    let (gx, gw, gb) = kernels::convt2d_backward(
                        &nodes[*x].value,
                        &nodes[*w].value,
                        &gy,
                        xs[0],
                        xs[1],
                        xs[2],
                        xs[3],
                        ws[1],
                        *k,
                        need_gx,
                        need_gb,
                    );
                    if let Some(gx) = gx {
                        add_to(*x, gx, &mut grads);
                    }
                    add_to(*w, gw, &mut grads);
                    if let (Some(bid), Some(gb)) = (b, gb) {
                        add_to(*bid, gb, &mut grads);
                    }
                }
                Op::Dense { x, w, b, relu } => {
                    let gy = masked(&gy, &nodes[id].value, *relu);
                    let (n, i) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                    let o = nodes[*w].shape[0];
                    if nodes[*x].requires_grad {
                        let mut gx = vec![T::zero(); n * i];
                        T::gemm(n, o, i, T::one(), &gy, false, &nodes[*w].value, false, T::zero(), &mut gx);
                        add_to(*x, gx, &mut grads);
                    }
                    let mut gw = vec![T::zero(); o * i];
                    T::gemm(o, n, i, T::one(), &gy, true, &nodes[*x].value, false, T::zero(), &mut gw);
                    add_to(*w, gw, &mut grads);
                    if let Some(bid) = b {
                        let mut gb = vec![T::zero(); o];
                        for r in 0..n {
                            for c in 0..o {
                                gb[c] += gy[r * o + c];
                            }
                        }
                        add_to(*bid, gb, &mut grads);
                    }
                }
                Op::Relu { x } => {
                    let gx = masked(&gy, &nodes[id].value, true);
                    add_to(*x, gx, &mut grads);
                }
                Op::Sigmoid { x } => {
                    let gx: Vec<T> = gy
                        .iter()
                        .zip(&nodes[id].value)
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect();
                    add_to(*x, gx, &mut grads);
                }
                Op::Add { a, b } => {
                    add_to(*a, gy.clone(), &mut grads);
                    add_to(*b, gy, &mut grads);
                }
                Op::Mul { a, b } => {
                    if nodes[*a].requires_grad {
                        let ga: Vec<T> =
                            gy.iter().zip(&nodes[*b].value).map(|(&g, &v)| g * v).collect();
                        add_to(*a, ga, &mut grads);
                    }
                    if nodes[*b].requires_grad {
                        let gb: Vec<T> =
                            gy.iter().zip(&nodes[*a].value).map(|(&g, &v)| g * v).collect();
                        add_to(*b, gb, &mut grads);
                    }
                }
                Op::ConcatChannels { parts } => {
                    let out_shape = &nodes[id].shape;
                    let (n, hw) = (out_shape[0], out_shape[2] * out_shape[3]);
                    let c_total = out_shape[1];
                    let mut c_off = 0;
                    for &p in parts {
                        let cp = nodes[p].shape[1];
                        if nodes[p].requires_grad {
                            let mut gp = vec![T::zero(); n * cp * hw];
                            for s in 0..n {
                                let src = &gy[(s * c_total + c_off) * hw..(s * c_total + c_off + cp) * hw];
                                gp[s * cp * hw..(s + 1) * cp * hw].copy_from_slice(src);
                            }
                            add_to(p, gp, &mut grads);
                        }
                        c_off += cp;
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let xs = &nodes[*x].shape;
                    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let inv = T::one() / T::of_f64(hw as f64);
                    let mut gx = vec![T::zero(); n * c * hw];
                    for s in 0..n {
                        for ch in 0..c {
                            let g = gy[s * c + ch] * inv;
                            gx[(s * c + ch) * hw..(s * c + ch + 1) * hw].fill(g);
                        }
                    }
                    add_to(*x, gx, &mut grads);
                }
                Op::Softmax { x } => {
                    let shape = &nodes[id].shape;
                    let (n, c) = (shape[0], shape[1]);
                    let p = &nodes[id].value;
                    let mut gx = vec![T::zero(); n * c];
                    for r in 0..n {
                        let pr = &p[r * c..(r + 1) * c];
                        let gr = &gy[r * c..(r + 1) * c];
                        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] = pr[j] * (gr[j] - dot);
                        }
                    }
                    add_to(*x, gx, &mut grads);
                }
                Op::SoftmaxXent { logits, targets } => {
                    let shape = &nodes[*logits].shape;
                    let (n, c) = (shape[0], shape[1]);
                    let p = kernels::softmax_rows(&nodes[*logits].value, n, c);
                    let scale = gy[0] / T::of_f64(n as f64);
                    let mut gx = p;
                    for (r, &t) in targets.iter().enumerate() {
                        gx[r * c + t] -= T::one();
                    }
                    for v in &mut gx {
                        *v = *v * scale;
                    }
                    add_to(*logits, gx, &mut grads);
                }
                Op::SigmoidBce { logits, targets } => {
                    let x = &nodes[*logits].value;
                    let scale = gy[0] / T::of_f64(x.len() as f64);
                    let gx: Vec<T> = x
                        .iter()
                        .zip(targets)
                        .map(|(&v, &t)| (kernels::sigmoid(v) - t) * scale)
                        .collect();
                    add_to(*logits, gx, &mut grads);
                }
                Op::SelectChannel { x, classes } => {
                    let xs = &nodes[*x].shape;
                    let (c, hw) = (xs[1], xs[2] * xs[3]);
                    let mut gx = vec![T::zero(); nodes[*x].value.len()];
                    for (s, &cls) in classes.iter().enumerate() {
                        gx[(s * c + cls) * hw..(s * c + cls + 1) * hw]
                            .copy_from_slice(&gy[s * hw..(s + 1) * hw]);
                    }
                    add_to(*x, gx, &mut grads);
                }
                Op::ChannelMix { x, w } => {
                    let xs = &nodes[*x].shape;
                    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let xv = &nodes[*x].value;
                    let wv = &nodes[*w].value;
                    if nodes[*x].requires_grad {
                        let mut gx = vec![T::zero(); xv.len()];
                        for s in 0..n {
                            for ch in 0..c {
                                let coef = wv[s * c + ch];
                                let dst = &mut gx[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                                for (d, &g) in dst.iter_mut().zip(&gy[s * hw..(s + 1) * hw]) {
                                    *d = coef * g;
                                }
                            }
                        }
                        add_to(*x, gx, &mut grads);
                    }
                    if nodes[*w].requires_grad {
                        let mut gw = vec![T::zero(); n * c];
                        for s in 0..n {
                            for ch in 0..c {
                                let src = &xv[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                                let mut acc = T::zero();
                                for (&v, &g) in src.iter().zip(&gy[s * hw..(s + 1) * hw]) {
                                    acc += v * g;
                                }
                                gw[s * c + ch] = acc;
                            }
                        }
                        add_to(*w, gw, &mut grads);
                    }
                }
                Op::Scale { x, factor } => {
                    let gx: Vec<T> = gy.iter().map(|&g| g * *factor).collect();
                    add_to(*x, gx, &mut grads);
                }
                Op::Sum { x } => {
                    let gx = vec![gy[0]; nodes[*x].value.len()];
                    add_to(*x, gx, &mut grads);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn masked<T: Scalar>(gy: &[T], out: &[T], relu: bool) -> Vec<T> {
    if relu {
        gy.iter()
            .zip(out)
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect()
    } else {
        gy.to_vec()
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Value<'_, T>) -> Option<&[T]> {
        self.grads[v.id].as_deref()
    }

    /// Gradient tensor for a leaf; zeros when the loss never reached it.
    pub fn tensor(&self, v: Value<'_, T>) -> Tensor<T> {
        match &self.grads[v.id] {
            Some(g) => Tensor::new(&self.shapes[v.id], g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl<'g, T: Scalar> Value<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(*self)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.graph.tensor(*self)
    }

    fn nodes(&self) -> std::cell::Ref<'g, Vec<Node<T>>> {
        self.graph.inner.borrow()
    }

    /// 2-D convolution with zero padding, optional bias and fused ReLU.
    pub fn conv2d(
        self,
        kernel: Value<'g, T>,
        bias: Option<Value<'g, T>>,
        stride: usize,
        padding: usize,
        relu: bool,
    ) -> Result<Value<'g, T>> {
        let (geom, value, shape) = {
            let nodes = self.nodes();
            let xs = &nodes[self.id].shape;
            let ws = &nodes[kernel.id].shape;
            let geom = ConvGeom::new(xs, ws, stride, padding).ok_or_else(|| {
                TensorError::shape("conv2d", format!("input {xs:?} vs kernel {ws:?} (stride {stride}, padding {padding})"))
            })?;
            if let Some(b) = bias {
                let bs = &nodes[b.id].shape;
                if bs != &[geom.c_out] {
                    return Err(TensorError::shape(
                        "conv2d",
                        format!("bias {bs:?} vs kernel {ws:?}"),
                    ));
                }
            }
            let bval = bias.map(|b| nodes[b.id].value.clone());
            let value = kernels::conv2d_forward(
                &nodes[self.id].value,
                &nodes[kernel.id].value,
                bval.as_deref(),
                &geom,
                relu,
            );
            (geom, value, vec![geom.n, geom.c_out, geom.oh, geom.ow])
        };
        let id = self.graph.push(
            Op::Conv2d {
                x: self.id,
                w: kernel.id,
                b: bias.map(|b| b.id),
                geom,
                relu,
            },
            shape,
            value,
            "conv2d".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Depthwise 3x3-style convolution: kernel `[C,1,kh,kw]`.
    pub fn dwconv2d(self, kernel: Value<'g, T>, stride: usize, padding: usize) -> Result<Value<'g, T>> {
        let (geom, value, shape) = {
            let nodes = self.nodes();
            let xs = &nodes[self.id].shape;
            let ws = &nodes[kernel.id].shape;
            if ws.len() != 4 || ws[1] != 1 || xs.len() != 4 || ws[0] != xs[1] {
                return Err(TensorError::shape(
                    "dwconv2d",
                    format!("input {xs:?} vs depthwise kernel {ws:?}"),
                ));
            }
            let geom = ConvGeom::new(
                xs,
                &[xs[1], xs[1], ws[2], ws[3]],
                stride,
                padding,
            )
            .ok_or_else(|| {
                TensorError::shape("dwconv2d", format!("input {xs:?} vs kernel {ws:?}"))
            })?;
            let value = kernels::dwconv2d_forward(&nodes[self.id].value, &nodes[kernel.id].value, &geom);
            (geom, value, vec![geom.n, geom.c_in, geom.oh, geom.ow])
        };
        let id = self.graph.push(
            Op::DwConv2d {
                x: self.id,
                w: kernel.id,
                geom,
            },
            shape,
            value,
            "dwconv2d".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Transposed convolution; requires kernel size == stride.
    /// Kernel layout `[C_in, C_out, k, k]`.
    pub fn conv2d_transpose(
        self,
        kernel: Value<'g, T>,
        bias: Option<Value<'g, T>>,
        stride: usize,
        relu: bool,
    ) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let xs = &nodes[self.id].shape;
            let ws = &nodes[kernel.id].shape;
            if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] {
                return Err(TensorError::shape(
                    "conv2d_transpose",
                    format!("input {xs:?} vs kernel {ws:?}"),
                ));
            }
            if ws[2] != stride || ws[3] != stride {
                return Err(TensorError::Invalid(format!(
                    "conv2d_transpose: kernel {:?} must be square with size == stride ({stride})",
                    ws
                )));
            }
            if let Some(b) = bias {
                let bs = &nodes[b.id].shape;
                if bs != &[ws[1]] {
                    return Err(TensorError::shape(
                        "conv2d_transpose",
                        format!("bias {bs:?} vs kernel {ws:?}"),
                    ));
                }
            }
            let bval = bias.map(|b| nodes[b.id].value.clone());
            let value = kernels::convt2d_forward(
                &nodes[self.id].value,
                &nodes[kernel.id].value,
                bval.as_deref(),
                xs[0],
                xs[1],
                xs[2],
                xs[3],
                ws[1],
                stride,
                relu,
            );
            (value, vec![xs[0], ws[1], xs[2] * stride, xs[3] * stride])
        };
        let id = self.graph.push(
            Op::ConvT2d {
                x: self.id,
                w: kernel.id,
                b: bias.map(|b| b.id),
                k: stride,
                relu,
            },
            shape,
            value,
            "conv2d_transpose".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Fully connected layer: `x [N,I] . w [O,I]^T + b [O]`.
    pub fn dense(
        self,
        weight: Value<'g, T>,
        bias: Option<Value<'g, T>>,
        relu: bool,
    ) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let xs = &nodes[self.id].shape;
            let ws = &nodes[weight.id].shape;
            if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
                return Err(TensorError::shape(
                    "dense",
                    format!("input {xs:?} vs weight {ws:?}"),
                ));
            }
            let (n, i, o) = (xs[0], xs[1], ws[0]);
            let mut value = vec![T::zero(); n * o];
            T::gemm(n, i, o, T::one(), &nodes[self.id].value, false, &nodes[weight.id].value, true, T::zero(), &mut value);
            if let Some(b) = bias {
                let bs = &nodes[b.id].shape;
                if bs != &[o] {
                    return Err(TensorError::shape("dense", format!("bias {bs:?} vs weight {ws:?}")));
                }
                for r in 0..n {
                    for (v, bv) in value[r * o..(r + 1) * o].iter_mut().zip(&nodes[b.id].value) {
                        *v += *bv;
                    }
                }
            }
            if relu {
                for v in &mut value {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            (value, vec![n, o])
        };
        let id = self.graph.push(
            Op::Dense {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                relu,
            },
            shape,
            value,
            "dense".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    pub fn relu(self) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let value = nodes[self.id]
                .value
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect();
            (value, nodes[self.id].shape.clone())
        };
        let id = self
            .graph
            .push(Op::Relu { x: self.id }, shape, value, "relu".to_string())?;
        Ok(Value { graph: self.graph, id })
    }

    pub fn sigmoid(self) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let value = nodes[self.id].value.iter().map(|&v| kernels::sigmoid(v)).collect();
            (value, nodes[self.id].shape.clone())
        };
        let id = self
            .graph
            .push(Op::Sigmoid { x: self.id }, shape, value, "sigmoid".to_string())?;
        Ok(Value { graph: self.graph, id })
    }

    pub fn add(self, other: Value<'g, T>) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(TensorError::shape(
                    "add",
                    format!("{:?} vs {:?}", a.shape, b.shape),
                ));
            }
            let value = a.value.iter().zip(&b.value).map(|(&x, &y)| x + y).collect();
            (value, a.shape.clone())
        };
        let id = self.graph.push(
            Op::Add { a: self.id, b: other.id },
            shape,
            value,
            "add".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    pub fn mul(self, other: Value<'g, T>) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(TensorError::shape(
                    "mul",
                    format!("{:?} vs {:?}", a.shape, b.shape),
                ));
            }
            let value = a.value.iter().zip(&b.value).map(|(&x, &y)| x * y).collect();
            (value, a.shape.clone())
        };
        let id = self.graph.push(
            Op::Mul { a: self.id, b: other.id },
            shape,
            value,
            "mul".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Concatenate along the channel axis of `[N,C,H,W]` tensors.
    pub fn concat_channels(self, others: &[Value<'g, T>]) -> Result<Value<'g, T>> {
        let mut parts = vec![self.id];
        parts.extend(others.iter().map(|v| v.id));
        let (value, shape) = {
            let nodes = self.nodes();
            let first = &nodes[self.id].shape;
            if first.len() != 4 {
                return Err(TensorError::shape("concat", format!("rank-4 required, got {first:?}")));
            }
            let (n, h, w) = (first[0], first[2], first[3]);
            let mut c_total = 0;
            for &p in &parts {
                let s = &nodes[p].shape;
                if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                    return Err(TensorError::shape(
                        "concat",
                        format!("non-channel extents differ: {first:?} vs {s:?}"),
                    ));
                }
                c_total += s[1];
            }
            let hw = h * w;
            let mut value = vec![T::zero(); n * c_total * hw];
            for s in 0..n {
                let mut c_off = 0;
                for &p in &parts {
                    let cp = nodes[p].shape[1];
                    value[(s * c_total + c_off) * hw..(s * c_total + c_off + cp) * hw]
                        .copy_from_slice(&nodes[p].value[s * cp * hw..(s + 1) * cp * hw]);
                    c_off += cp;
                }
            }
            (value, vec![n, c_total, h, w])
        };
        let id = self
            .graph
            .push(Op::ConcatChannels { parts }, shape, value, "concat".to_string())?;
        Ok(Value { graph: self.graph, id })
    }

    /// Global average pool `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(self) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            if s.len() != 4 {
                return Err(TensorError::shape("global_avg_pool", format!("rank-4 required, got {s:?}")));
            }
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            let inv = T::one() / T::of_f64(hw as f64);
            let x = &nodes[self.id].value;
            let mut value = vec![T::zero(); n * c];
            for i in 0..n * c {
                let mut acc = T::zero();
                for &v in &x[i * hw..(i + 1) * hw] {
                    acc += v;
                }
                value[i] = acc * inv;
            }
            (value, vec![n, c])
        };
        let id = self
            .graph
            .push(Op::GlobalAvgPool { x: self.id }, shape, value, "global_avg_pool".to_string())?;
        Ok(Value { graph: self.graph, id })
    }

    /// Row softmax on `[N,C]`.
    pub fn softmax(self) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            if s.len() != 2 {
                return Err(TensorError::shape("softmax", format!("rank-2 required, got {s:?}")));
            }
            (kernels::softmax_rows(&nodes[self.id].value, s[0], s[1]), s.clone())
        };
        let id = self
            .graph
            .push(Op::Softmax { x: self.id }, shape, value, "softmax".to_string())?;
        Ok(Value { graph: self.graph, id })
    }

    /// Mean negative log softmax probability of the target class.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Result<Value<'g, T>> {
        let (value, targets) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            if s.len() != 2 || s[0] != targets.len() {
                return Err(TensorError::shape(
                    "softmax_cross_entropy",
                    format!("logits {s:?} vs {} targets", targets.len()),
                ));
            }
            let (n, c) = (s[0], s[1]);
            for (r, &t) in targets.iter().enumerate() {
                if t >= c {
                    return Err(TensorError::Invalid(format!(
                        "softmax_cross_entropy: target {t} out of range {c} in row {r}"
                    )));
                }
            }
            let x = &nodes[self.id].value;
            let mut acc = 0.0f64;
            for (r, &t) in targets.iter().enumerate() {
                let row = &x[r * c..(r + 1) * c];
                let m = row.iter().cloned().fold(row[0], T::max);
                let lse: f64 = row.iter().map(|&v| (v - m).as_f64().exp()).sum::<f64>().ln();
                acc += lse - (row[t] - m).as_f64();
            }
            (vec![T::of_f64(acc / n as f64)], targets.to_vec())
        };
        let id = self.graph.push(
            Op::SoftmaxXent { logits: self.id, targets },
            vec![1],
            value,
            "softmax_cross_entropy".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Mean stable binary cross-entropy with logits against {0,1} targets.
    pub fn sigmoid_bce(self, targets: &Tensor<T>) -> Result<Value<'g, T>> {
        let (value, tdata) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            if s != targets.shape() {
                return Err(TensorError::shape(
                    "sigmoid_bce",
                    format!("logits {s:?} vs targets {:?}", targets.shape()),
                ));
            }
            if targets
                .data()
                .iter()
                .any(|&t| t != T::zero() && t != T::one())
            {
                return Err(TensorError::Invalid(
                    "sigmoid_bce: targets must be exactly 0 or 1".to_string(),
                ));
            }
            let x = &nodes[self.id].value;
            let acc: f64 = x
                .iter()
                .zip(targets.data())
                .map(|(&v, &t)| kernels::bce_with_logits(v, t).as_f64())
                .sum();
            (
                vec![T::of_f64(acc / x.len() as f64)],
                targets.data().to_vec(),
            )
        };
        let id = self.graph.push(
            Op::SigmoidBce { logits: self.id, targets: tdata },
            vec![1],
            value,
            "sigmoid_bce".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Pick one channel per sample: `[N,C,H,W] + [N] -> [N,1,H,W]`.
    pub fn select_channel(self, classes: &[usize]) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            if s.len() != 4 || s[0] != classes.len() {
                return Err(TensorError::shape(
                    "select_channel",
                    format!("input {s:?} vs {} class indices", classes.len()),
                ));
            }
            let (c, hw) = (s[1], s[2] * s[3]);
            for &cls in classes {
                if cls >= c {
                    return Err(TensorError::Invalid(format!(
                        "select_channel: class {cls} out of range {c}"
                    )));
                }
            }
            let x = &nodes[self.id].value;
            let mut value = vec![T::zero(); s[0] * hw];
            for (sample, &cls) in classes.iter().enumerate() {
                value[sample * hw..(sample + 1) * hw]
                    .copy_from_slice(&x[(sample * c + cls) * hw..(sample * c + cls + 1) * hw]);
            }
            (value, vec![s[0], 1, s[2], s[3]])
        };
        let id = self.graph.push(
            Op::SelectChannel { x: self.id, classes: classes.to_vec() },
            shape,
            value,
            "select_channel".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Per-sample weighted channel sum:
    /// `x [N,C,H,W], w [N,C] -> [N,1,H,W]`, `out = sum_c w[n,c] x[n,c]`.
    pub fn channel_mix(self, weights: Value<'g, T>) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let s = &nodes[self.id].shape;
            let ws = &nodes[weights.id].shape;
            if s.len() != 4 || ws.len() != 2 || ws[0] != s[0] || ws[1] != s[1] {
                return Err(TensorError::shape(
                    "channel_mix",
                    format!("input {s:?} vs weights {ws:?}"),
                ));
            }
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            let x = &nodes[self.id].value;
            let w = &nodes[weights.id].value;
            let mut value = vec![T::zero(); n * hw];
            for sample in 0..n {
                let dst = &mut value[sample * hw..(sample + 1) * hw];
                for ch in 0..c {
                    let coef = w[sample * c + ch];
                    let src = &x[(sample * c + ch) * hw..(sample * c + ch + 1) * hw];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += coef * v;
                    }
                }
            }
            (value, vec![n, 1, s[2], s[3]])
        };
        let id = self.graph.push(
            Op::ChannelMix { x: self.id, w: weights.id },
            shape,
            value,
            "channel_mix".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Multiply by a compile-time constant.
    pub fn scale(self, factor: T) -> Result<Value<'g, T>> {
        let (value, shape) = {
            let nodes = self.nodes();
            let value = nodes[self.id].value.iter().map(|&v| v * factor).collect();
            (value, nodes[self.id].shape.clone())
        };
        let id = self.graph.push(
            Op::Scale { x: self.id, factor },
            shape,
            value,
            "scale".to_string(),
        )?;
        Ok(Value { graph: self.graph, id })
    }

    /// Sum of all elements, yielding a scalar node.
    pub fn sum(self) -> Result<Value<'g, T>> {
        let value = {
            let nodes = self.nodes();
            let mut acc = T::zero();
            for &v in &nodes[self.id].value {
                acc += v;
            }
            vec![acc]
        };
        let id = self
            .graph
            .push(Op::Sum { x: self.id }, vec![1], value, "sum".to_string())?;
        Ok(Value { graph: self.graph, id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_product_gradient_is_other_factor() {
        let g = Graph::new();
        let w = g.leaf(t(&[4], &[1.0, -2.0, 0.5, 3.0]).with_grad());
        let x = g.leaf(t(&[4], &[2.0, 4.0, -1.0, 0.25]));
        let loss = w.mul(x).unwrap().sum().unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.tensor(w).data(), &[2.0, 4.0, -1.0, 0.25]);
    }

    #[test]
    fn fan_out_accumulates_additively() {
        let g = Graph::new();
        let w = g.leaf(t(&[1], &[5.0]).with_grad());
        let y = w.add(w).unwrap().sum().unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.tensor(w).data(), &[2.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let w = g.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let u = g.leaf(t(&[2], &[3.0, 4.0]).with_grad());
        let loss = w.sum().unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.tensor(u).data(), &[0.0, 0.0]);
        assert_eq!(grads.tensor(w).data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let g = Graph::new();
        let w = g.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let y = w.relu().unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[0.0, -2.0, 3.0]));
        let s = x.sigmoid().unwrap().to_tensor();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        let r = x.relu().unwrap().to_tensor();
        assert_eq!(r.data(), &[0.0, 0.0, 3.0]);
        let pooled = g
            .leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]))
            .global_avg_pool()
            .unwrap()
            .to_tensor();
        assert_eq!(pooled.data(), &[2.5]);
    }

    #[test]
    fn softmax_cross_entropy_closed_forms() {
        let g = Graph::new();
        let uniform = g.leaf(t(&[1, 2], &[0.0, 0.0]));
        let l = uniform.softmax_cross_entropy(&[0]).unwrap().to_tensor().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let skew = g.leaf(t(&[1, 2], &[3.0f64.ln(), 0.0]));
        let l = skew.softmax_cross_entropy(&[0]).unwrap().to_tensor().item();
        assert!((l - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_target() {
        let g = Graph::new();
        let logits = g.leaf(t(&[1, 3], &[0.0, 1.0, 2.0]));
        assert!(logits.softmax_cross_entropy(&[3]).is_err());
    }

    #[test]
    fn sigmoid_bce_closed_forms_and_gradient() {
        let g = Graph::new();
        let logits = g.leaf(t(&[2], &[0.0, 20.0]).with_grad());
        let targets = t(&[2], &[1.0, 1.0]);
        let loss = logits.sigmoid_bce(&targets).unwrap();
        let expect = (std::f64::consts::LN_2 + 2.0611536181902037e-9) / 2.0;
        assert!((loss.to_tensor().item() - expect).abs() < 1e-12);
        // gradient = (sigmoid(x) - t) / N per element
        let grads = g.backward(loss).unwrap();
        let gl = grads.tensor(logits);
        assert!((gl.data()[0] - (0.5 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_bce_rejects_non_binary_targets() {
        let g = Graph::new();
        let logits = g.leaf(t(&[1], &[0.0]));
        assert!(logits.sigmoid_bce(&t(&[1], &[0.5])).is_err());
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let g = Graph::new();
        let a = g.leaf(Tensor::<f64>::zeros(&[2, 3]));
        let b = g.leaf(Tensor::<f64>::zeros(&[3, 2]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn non_finite_forward_is_hard_error() {
        let g = Graph::new();
        let x = g.leaf(t(&[1], &[1e308]));
        let y = x.mul(x).unwrap_err();
        assert!(matches!(y, TensorError::NotFinite { .. }));
    }

    #[test]
    fn select_channel_semantics() {
        let g = Graph::new();
        let x = g.leaf(t(&[2, 2, 1, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]).with_grad());
        let y = x.select_channel(&[1, 0]).unwrap();
        assert_eq!(y.to_tensor().data(), &[3., 4., 5., 6.]);
        let loss = y.sum().unwrap();
        let grads = g.backward(loss).unwrap();
        // untouched channels keep exactly zero gradient
        assert_eq!(grads.tensor(x).data(), &[0., 0., 1., 1., 1., 1., 0., 0.]);
    }

    #[test]
    fn channel_mix_matches_manual_sum() {
        let g = Graph::new();
        let x = g.leaf(t(&[1, 2, 1, 2], &[1., 2., 10., 20.]));
        let w = g.leaf(t(&[1, 2], &[0.25, 0.5]));
        let y = x.channel_mix(w).unwrap().to_tensor();
        assert_eq!(y.data(), &[0.25 + 5.0, 0.5 + 10.0]);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let g = Graph::new();
            let mut rng = crate::seed::stream(11, 1, 0, 0);
            let x = g.leaf(super::super::uniform_tensor::<f64, _>(&[2, 3, 8, 8], 1.0, &mut rng).with_grad());
            let w = g.leaf(super::super::uniform_tensor::<f64, _>(&[4, 3, 3, 3], 0.5, &mut rng).with_grad());
            let y = x.conv2d(w, None, 1, 1, true).unwrap();
            let loss = y.sum().unwrap();
            let grads = g.backward(loss).unwrap();
            (grads.tensor(x).into_data(), grads.tensor(w).into_data())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert!(a1.iter().zip(&a2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(b1.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
