//! Recorded computation (tape) with reverse-mode gradient accumulation.
//!
//! A `Graph` is built per forward pass: leaves carry inputs and parameters,
//! ops record whatever the backward sweep needs (argmax indices, cached
//! values). `backward` walks the tape in reverse and accumulates gradients
//! for every node that transitively depends on a `needs_grad` leaf.

use super::kernels;
use super::{same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Probability floor applied before `ln` in cross-entropy.
pub const CE_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Reshape { x: NodeId },
    Conv2d { x: NodeId, k: NodeId, b: NodeId },
    MaxPool2d { x: NodeId, argmax: Vec<u32> },
    RowMax { x: NodeId, rows: usize, argmax: Vec<u32> },
    Softmax { x: NodeId },
    Mse { pred: NodeId, target: NodeId },
    CrossEntropy { pred: NodeId, target: NodeId },
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<E> {
    nodes: Vec<Node<E>>,
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Grads<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Grads<E> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.grads[id.0].take()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<E>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.leaf(value, false)
    }

    /// Fully-connected layer: y = x · wᵀ + b with w: [m, n], b: [m].
    /// A 1-D input is treated as a single row.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, n_in) = row_view(self.value(x).shape());
        let ws = self.value(w).shape();
        if ws.len() != 2 {
            return Err(Error::Shape(format!("dense weights must be 2-D, got {ws:?}")));
        }
        let (n_out, w_in) = (ws[0], ws[1]);
        if w_in != n_in {
            return Err(Error::Shape(format!(
                "dense: input width {n_in} (shape {:?}) vs weights {ws:?}",
                self.value(x).shape()
            )));
        }
        if self.value(b).shape() != [n_out] {
            return Err(Error::Shape(format!(
                "dense: bias {:?} vs weights {ws:?}",
                self.value(b).shape()
            )));
        }
        let mut out = vec![E::zero(); batch * n_out];
        kernels::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            Some(self.value(b).data()),
            batch,
            n_in,
            n_out,
            &mut out,
        );
        let shape = if self.value(x).shape().len() == 1 {
            vec![n_out]
        } else {
            vec![batch, n_out]
        };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(E::zero())).collect();
        let t = Tensor::new(v.shape().to_vec(), data).unwrap();
        let needs = self.needs(x);
        self.push(t, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let one = E::one();
        let data = v
            .data()
            .iter()
            .map(|&a| one / (one + (-a).exp()))
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data).unwrap();
        let needs = self.needs(x);
        self.push(t, Op::Sigmoid { x }, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    /// Valid-padding stride-1 cross-correlation with per-channel bias.
    /// x: [B, C, H, W] (or [C, H, W]), k: [K, C, kh, kw], b: [K].
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, c, h, w, batched) = chw_view(self.value(x).shape())?;
        let ks = self.value(k).shape().to_vec();
        if ks.len() != 4 || ks[1] != c {
            return Err(Error::Shape(format!(
                "conv2d: kernels {ks:?} vs input {:?}",
                self.value(x).shape()
            )));
        }
        let (k_out, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h || kw > w {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        if self.value(b).shape() != [k_out] {
            return Err(Error::Shape(format!(
                "conv2d: bias {:?} vs kernels {ks:?}",
                self.value(b).shape()
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![E::zero(); batch * k_out * oh * ow];
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            batch,
            (c, h, w),
            (k_out, kh, kw),
            &mut out,
        );
        let shape = if batched {
            vec![batch, k_out, oh, ow]
        } else {
            vec![k_out, oh, ow]
        };
        let needs = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, k, b }, needs))
    }

    /// 2x2 stride-2 max pooling; requires even spatial dims.
    pub fn maxpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (batch, c, h, w, batched) = chw_view(self.value(x).shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2d: spatial dims must be even, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![E::zero(); batch * c * oh * ow];
        let mut argmax = Vec::new();
        kernels::maxpool2d_forward(self.value(x).data(), batch, (c, h, w), &mut out, &mut argmax);
        let shape = if batched {
            vec![batch, c, oh, ow]
        } else {
            vec![c, oh, ow]
        };
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool2d { x, argmax }, needs))
    }

    /// Per-column maximum over groups of `rows` consecutive rows.
    /// x: [G*rows, C] -> [G, C]. Ties go to the lowest row.
    pub fn rowmax(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let xs = self.value(x).shape();
        if xs.len() != 2 || xs[0] % rows != 0 {
            return Err(Error::Shape(format!(
                "rowmax: input {xs:?} not divisible into groups of {rows} rows"
            )));
        }
        let groups = xs[0] / rows;
        let cols = xs[1];
        let mut out = vec![E::zero(); groups * cols];
        let mut argmax = Vec::new();
        kernels::rowmax_forward(self.value(x).data(), groups, rows, cols, &mut out, &mut argmax);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![groups, cols], out)?,
            Op::RowMax { x, rows, argmax },
            needs,
        ))
    }

    /// Row index (within its group) of the per-column maximum of the most
    /// recent `rowmax` node.
    pub fn rowmax_argmax(&self, id: NodeId) -> Option<&[u32]> {
        match &self.nodes[id.0].op {
            Op::RowMax { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Row-wise softmax with max subtraction. 1-D input is one row.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = row_view(self.value(x).shape());
        let mut out = vec![E::zero(); rows * cols];
        kernels::softmax_rows(self.value(x).data(), rows, cols, &mut out);
        let t = Tensor::new(self.value(x).shape().to_vec(), out).unwrap();
        let needs = self.needs(x);
        self.push(t, Op::Softmax { x }, needs)
    }

    /// Mean of squared differences over all elements; scalar output.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        same_shape(self.value(pred), self.value(target), "mse")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut s = E::zero();
        for i in 0..p.len() {
            let d = p[i] - t[i];
            s = s + d * d;
        }
        let v = s / E::from_f64(p.len() as f64);
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }, needs))
    }

    /// Cross-entropy −Σ target·ln(pred) averaged over rows, with pred
    /// clamped at CE_LOG_FLOOR before the log. Scalar output.
    pub fn cross_entropy(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        same_shape(self.value(pred), self.value(target), "cross_entropy")?;
        let (rows, cols) = row_view(self.value(pred).shape());
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let floor = E::from_f64(CE_LOG_FLOOR);
        let mut s = E::zero();
        for i in 0..rows * cols {
            if t[i] != E::zero() {
                s = s - t[i] * p[i].max(floor).ln();
            }
        }
        let v = s / E::from_f64(rows as f64);
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(v), Op::CrossEntropy { pred, target }, needs))
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Grads<E>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(E::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.distribute(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<E>>], id: NodeId, add: impl FnOnce(&mut [E])) {
        if !self.needs(id) {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(id).shape().to_vec()));
        }
        add(slot.as_mut().unwrap().data_mut());
    }

    fn distribute(&self, idx: usize, dy: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (batch, n_in) = row_view(self.value(*x).shape());
                let n_out = self.value(*w).shape()[0];
                self.accumulate(grads, *x, |dx| {
                    kernels::dense_backward_input(
                        dy.data(),
                        self.value(*w).data(),
                        batch,
                        n_in,
                        n_out,
                        dx,
                    );
                });
                self.accumulate(grads, *w, |dw| {
                    kernels::dense_backward_weights(
                        dy.data(),
                        self.value(*x).data(),
                        batch,
                        n_in,
                        n_out,
                        dw,
                    );
                });
                self.accumulate(grads, *b, |db| {
                    kernels::dense_backward_bias(dy.data(), batch, n_out, db);
                });
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        if xv[i] > E::zero() {
                            dx[i] = dx[i] + dy.data()[i];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[idx].value.data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        let y = yv[i];
                        dx[i] = dx[i] + dy.data()[i] * y * (E::one() - y);
                    }
                });
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] = dx[i] + dy.data()[i];
                    }
                });
            }
            Op::Conv2d { x, k, b } => {
                let (batch, c, h, w, _) = chw_view(self.value(*x).shape()).unwrap();
                let ks = self.value(*k).shape();
                let dims = (ks[0], ks[2], ks[3]);
                self.accumulate(grads, *x, |dx| {
                    kernels::conv2d_backward(
                        dy.data(),
                        self.value(*x).data(),
                        self.value(*k).data(),
                        batch,
                        (c, h, w),
                        dims,
                        Some(dx),
                        None,
                        None,
                    );
                });
                self.accumulate(grads, *k, |dk| {
                    kernels::conv2d_backward(
                        dy.data(),
                        self.value(*x).data(),
                        self.value(*k).data(),
                        batch,
                        (c, h, w),
                        dims,
                        None,
                        Some(dk),
                        None,
                    );
                });
                self.accumulate(grads, *b, |db| {
                    kernels::conv2d_backward(
                        dy.data(),
                        self.value(*x).data(),
                        self.value(*k).data(),
                        batch,
                        (c, h, w),
                        dims,
                        None,
                        None,
                        Some(db),
                    );
                });
            }
            Op::MaxPool2d { x, argmax } => {
                self.accumulate(grads, *x, |dx| {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src as usize] = dx[src as usize] + dy.data()[o];
                    }
                });
            }
            Op::RowMax { x, rows, argmax } => {
                let cols = self.nodes[idx].value.shape()[1];
                let groups = self.nodes[idx].value.shape()[0];
                self.accumulate(grads, *x, |dx| {
                    for g in 0..groups {
                        for cc in 0..cols {
                            let r = argmax[g * cols + cc] as usize;
                            let i = (g * rows + r) * cols + cc;
                            dx[i] = dx[i] + dy.data()[g * cols + cc];
                        }
                    }
                });
            }
            Op::Softmax { x } => {
                let (rows, cols) = row_view(self.value(*x).shape());
                let yv = self.nodes[idx].value.data();
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let d = &dy.data()[r * cols..(r + 1) * cols];
                        let inner = kernels::dot(y, d);
                        for cc in 0..cols {
                            dx[r * cols + cc] =
                                dx[r * cols + cc] + y[cc] * (d[cc] - inner);
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let dyv = dy.data()[0];
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = E::from_f64(2.0 / p.len() as f64) * dyv;
                self.accumulate(grads, *pred, |dp| {
                    for i in 0..dp.len() {
                        dp[i] = dp[i] + scale * (p[i] - t[i]);
                    }
                });
                self.accumulate(grads, *target, |dt| {
                    for i in 0..dt.len() {
                        dt[i] = dt[i] - scale * (p[i] - t[i]);
                    }
                });
            }
            Op::CrossEntropy { pred, target } => {
                let dyv = dy.data()[0];
                let (rows, _) = row_view(self.value(*pred).shape());
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let floor = E::from_f64(CE_LOG_FLOOR);
                let inv_rows = E::from_f64(1.0 / rows as f64);
                self.accumulate(grads, *pred, |dp| {
                    for i in 0..dp.len() {
                        if t[i] != E::zero() && p[i] > floor {
                            dp[i] = dp[i] - dyv * inv_rows * t[i] / p[i];
                        }
                    }
                });
            }
        }
    }
}

/// Interpret a shape as (rows, cols): 1-D is a single row.
fn row_view(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        _ => (
            shape[..shape.len() - 1].iter().product(),
            shape[shape.len() - 1],
        ),
    }
}

/// Interpret a shape as (batch, C, H, W, was_batched).
fn chw_view(shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match shape.len() {
        3 => Ok((1, shape[0], shape[1], shape[2], false)),
        4 => Ok((shape[0], shape[1], shape[2], shape[3], true)),
        _ => Err(Error::Shape(format!(
            "expected [C,H,W] or [B,C,H,W], got {shape:?}"
        ))),
    }
}
