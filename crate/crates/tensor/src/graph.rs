//! Reverse-mode tape.
//!
//! A [`Graph`] records every op applied to its [`Var`]s in creation order,
//! which is already a valid topological order, so backward is a single
//! reverse sweep. Parameters are borrowed for the lifetime of the graph;
//! gradients come back keyed by the caller's parameter ids and batch-norm
//! running-stat updates are returned instead of being written in place.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::conv::{conv_backward, conv_forward, ConvGeom};
use crate::kernels::norm::{bn_backward, bn_forward, BnSaved};
use crate::kernels::{self, hard_sigmoid, log_sum_exp, softmax_row};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Caller-chosen parameter identifier.
pub type ParamId = usize;

/// Work executed by a graph, by op kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub ops: u64,
    pub macs: u64,
    pub conv_ops: u64,
    pub linear_ops: u64,
    pub by_kind: BTreeMap<&'static str, u64>,
}

impl ExecStats {
    fn record(&mut self, kind: &'static str, macs: u64) {
        self.ops += 1;
        self.macs += macs;
        *self.by_kind.entry(kind).or_default() += 1;
        match kind {
            "conv2d" => self.conv_ops += 1,
            "linear" => self.linear_ops += 1,
            _ => {}
        }
    }
}

/// Batch statistics measured by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub tag: usize,
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

enum Value<'a, T: Element> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T: Element> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Conv { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: BnSaved, dims: (usize, usize, usize) },
    Relu { x: Var },
    HardSigmoid { x: Var },
    GlobalAvgPool { x: Var, hw: usize },
    Reshape { x: Var },
    ChannelBias { x: Var, b: Var, c: usize, hw: usize },
    ChannelMul { x: Var, gate: Var, hw: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Concat { a: Var, b: Var, ca: usize, cb: usize, hw: usize },
    Linear { x: Var, w: Var, b: Option<Var>, dims: (usize, usize, usize) },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Vec<f64>, k: usize, count: usize },
}

struct Node<'a, T: Element> {
    value: Value<'a, T>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Element> {
    params: BTreeMap<ParamId, Tensor<T>>,
    leaves: BTreeMap<Var, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn leaf(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}

pub struct Graph<'a, T: Element = f32> {
    nodes: Vec<Node<'a, T>>,
    grad_enabled: bool,
    check_finite: bool,
    stats: ExecStats,
    bn_updates: Vec<BnUpdate>,
}

impl<'a, T: Element> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Element> Graph<'a, T> {
    /// A recording graph.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
            check_finite: true,
            stats: ExecStats::default(),
            bn_updates: Vec::new(),
        }
    }

    /// A graph that only evaluates; [`Graph::backward`] fails on it.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> &ExecStats {
        &self.stats
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Moves a value out of the graph, cloning it if it was borrowed.
    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        match std::mem::replace(&mut self.nodes[v.0].value, Value::Owned(Tensor::zeros(&[0]))) {
            Value::Owned(t) => t,
            Value::Borrowed(t) => {
                let mut t = t.clone();
                t.zero_grad();
                t
            }
        }
    }

    fn push(&mut self, value: Value<'a, T>, op: Op, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed trainable parameter; differentiable when the tensor has `requires_grad`.
    pub fn param(&mut self, t: &'a Tensor<T>, id: ParamId) -> Var {
        let rg = self.grad_enabled && t.requires_grad();
        self.push(Value::Borrowed(t), Op::Leaf, rg, Some(id))
    }

    /// Borrowed value that never receives a gradient.
    pub fn constant(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, false, None)
    }

    /// Owned input value.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false, None)
    }

    /// Owned leaf whose gradient is reported through [`Gradients::leaf`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(Value::Owned(t), Op::Leaf, rg, None)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn emit(&mut self, kind: &'static str, macs: u64, out: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !out.is_finite() {
            return Err(TensorError::NonFinite { op: kind });
        }
        self.stats.record(kind, macs);
        let rg = self.any_grad(inputs);
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push(Value::Owned(out), op, rg, None))
    }

    /// Dense (`groups = 1`) or depthwise (`groups = C`) convolution, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        let geom = ConvGeom::new("conv2d", self.shape(x), self.shape(w), stride, pad, groups)?;
        let out = conv_forward(self.value(x).data(), self.value(w).data(), &geom);
        let out = Tensor::new(&geom.output_shape(), out)?;
        self.emit("conv2d", geom.macs(), out, Op::Conv { x, w, geom }, &[x, w])
    }

    /// Batch norm over `N×H×W` per channel. Training mode normalizes with
    /// batch statistics and queues a [`BnUpdate`] under `tag`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        training: bool,
        eps: f64,
        tag: usize,
    ) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::Precondition("batch_norm: eps must be > 0".into()));
        }
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("batch_norm", format!("input rank {} < 2", shape.len())));
        }
        let (n, c) = (shape[0], shape[1]);
        let hw: usize = shape[2..].iter().product();
        for (name, t) in [
            ("gamma", self.value(gamma)),
            ("beta", self.value(beta)),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.numel() != c {
                return Err(TensorError::dim(
                    "batch_norm",
                    format!("{name} has {} values for {c} channels", t.numel()),
                ));
            }
        }
        let (y, saved) = bn_forward(
            self.value(x).data(),
            (n, c, hw),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean.data(),
            running_var.data(),
            training,
            eps,
        );
        if training {
            self.bn_updates.push(BnUpdate {
                tag,
                mean: saved.mean.clone(),
                var: saved.unbiased_var.clone(),
            });
        }
        let out = Tensor::new(&shape, y)?;
        self.emit(
            "batch_norm",
            0,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                dims: (n, c, hw),
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape(),
            t.data()
                .iter()
                .map(|v| if v.to_f64() > 0.0 { *v } else { T::zero() })
                .collect(),
        )?;
        self.emit("relu", 0, out, Op::Relu { x }, &[x])
    }

    /// `clamp((x + 3) / 6, 0, 1)`.
    pub fn hard_sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape(),
            t.data().iter().map(|v| T::from_f64(hard_sigmoid(v.to_f64()))).collect(),
        )?;
        self.emit("hard_sigmoid", 0, out, Op::HardSigmoid { x }, &[x])
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let out = kernels::global_avg_pool(self.value(x).data(), n * c, h * w);
        let out = Tensor::new(&[n, c], out)?;
        self.emit("global_avg_pool", 0, out, Op::GlobalAvgPool { x, hw: h * w }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let mut out = out;
        out.zero_grad();
        out.set_requires_grad(false);
        self.emit("reshape", 0, out, Op::Reshape { x }, &[x])
    }

    /// Adds `b[c]` to every element of channel `c` (dim 1).
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.value(b).numel() != shape[1] {
            return Err(TensorError::dim(
                "channel_bias",
                format!("bias of {} values for input {:?}", self.value(b).numel(), shape),
            ));
        }
        let c = shape[1];
        let hw: usize = shape[2..].iter().product();
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| T::from_f64(v.to_f64() + bias[(i / hw) % c].to_f64()))
            .collect();
        let out = Tensor::new(&shape, data)?;
        self.emit("channel_bias", 0, out, Op::ChannelBias { x, b, c, hw }, &[x, b])
    }

    /// `x[N, C, H, W] * gate[N, C]` broadcast over space.
    pub fn channel_mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("channel_mul")?;
        if self.shape(gate) != [n, c] {
            return Err(TensorError::dim(
                "channel_mul",
                format!("gate {:?} for input {:?}", self.shape(gate), [n, c, h, w]),
            ));
        }
        let hw = h * w;
        let g = self.value(gate).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| T::from_f64(v.to_f64() * g[i / hw].to_f64()))
            .collect();
        let out = Tensor::new(&[n, c, h, w], data)?;
        self.emit("channel_mul", 0, out, Op::ChannelMul { x, gate, hw }, &[x, gate])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| T::from_f64(x.to_f64() + y.to_f64()))
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        self.emit("add", 0, out, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| T::from_f64(x.to_f64() * y.to_f64()))
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        self.emit("mul", 0, out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape(),
            t.data().iter().map(|v| T::from_f64(v.to_f64() * factor)).collect(),
        )?;
        self.emit("scale", 0, out, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        self.emit("sum", 0, Tensor::scalar(T::from_f64(s)), Op::Sum { x }, &[x])
    }

    /// Concatenates two NCHW tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(TensorError::dim(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let hw = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            data.extend_from_slice(&da[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&db[i * cb * hw..(i + 1) * cb * hw]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], data)?;
        self.emit("concat_channels", 0, out, Op::Concat { a, b, ca, cb, hw }, &[a, b])
    }

    /// `x[N, F] · w[O, F]ᵀ + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = self.value(x).dims2("linear")?;
        let (o, wf) = self.value(w).dims2("linear")?;
        if wf != f {
            return Err(TensorError::dim("linear", format!("input has {f} features, weight expects {wf}")));
        }
        if let Some(b) = b {
            if self.value(b).numel() != o {
                return Err(TensorError::dim(
                    "linear",
                    format!("bias has {} values for {o} outputs", self.value(b).numel()),
                ));
            }
        }
        let out = kernels::linear(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            f,
            o,
        );
        let out = Tensor::new(&[n, o], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.emit(
            "linear",
            (n * f * o) as u64,
            out,
            Op::Linear { x, w, b, dims: (n, f, o) },
            &inputs,
        )
    }

    /// Mean softmax cross-entropy over rows that carry a label.
    ///
    /// Rows labelled `None` contribute nothing; when no row is labelled the
    /// loss is exactly zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::dim(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().flatten().find(|&&l| l >= k) {
            return Err(TensorError::Label { label: bad, classes: k });
        }
        let data = self.value(logits).to_f64_vec();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, label) in labels.iter().enumerate() {
            let row = &data[i * k..(i + 1) * k];
            probs.extend(softmax_row(row));
            if let Some(l) = label {
                total += log_sum_exp(row) - row[*l];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        self.emit(
            "cross_entropy",
            0,
            Tensor::scalar(T::from_f64(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                k,
                count,
            },
            &[logits],
        )
    }

    /// Plain cross-entropy with every row labelled.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let labels: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        self.cross_entropy(logits, &labels)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(TensorError::Tape("graph was recorded without gradients".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Tape(format!("{loss:?} is not on this tape")));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Tape(
                "loss is detached: no differentiable input reaches it".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Gradients<T> = Gradients {
            params: BTreeMap::new(),
            leaves: BTreeMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let t = Tensor::new(
                    node.value.get().shape(),
                    gy.iter().map(|v| T::from_f64(*v)).collect(),
                )?;
                match node.param {
                    Some(id) => {
                        if let Some(prev) = out.params.get_mut(&id) {
                            for (p, g) in prev.data_mut().iter_mut().zip(t.data()) {
                                *p = T::from_f64(p.to_f64() + g.to_f64());
                            }
                        } else {
                            out.params.insert(id, t);
                        }
                    }
                    None => {
                        out.leaves.insert(Var(i), t);
                    }
                }
                continue;
            }
            for (var, g) in self.input_grads(&node.op, &gy, node.value.get())? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn f64s(&self, v: Var) -> Vec<f64> {
        self.value(v).to_f64_vec()
    }

    /// Vector-Jacobian products for one op.
    fn input_grads(&self, op: &Op, gy: &[f64], out: &Tensor<T>) -> Result<Vec<(Var, Vec<f64>)>> {
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, geom } => {
                let (gx, gw) = conv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy,
                    geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(gx) = gx {
                    res.push((*x, gx));
                }
                if let Some(gw) = gw {
                    res.push((*w, gw));
                }
            }
            Op::BatchNorm { x, gamma, beta, saved, dims } => {
                let (dx, dg, db) = bn_backward(
                    self.value(*x).data(),
                    gy,
                    *dims,
                    self.value(*gamma).data(),
                    saved,
                );
                res.push((*x, dx));
                res.push((*gamma, dg));
                res.push((*beta, db));
            }
            Op::Relu { x } => {
                let xs = self.value(*x).data();
                res.push((
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(g, v)| if v.to_f64() > 0.0 { *g } else { 0.0 })
                        .collect(),
                ));
            }
            Op::HardSigmoid { x } => {
                let xs = self.value(*x).data();
                res.push((
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(g, v)| {
                            let v = v.to_f64();
                            if v > -3.0 && v < 3.0 {
                                g / 6.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                ));
            }
            Op::GlobalAvgPool { x, hw } => {
                let mut g = Vec::with_capacity(gy.len() * hw);
                for v in gy {
                    g.extend(std::iter::repeat(v / *hw as f64).take(*hw));
                }
                res.push((*x, g));
            }
            Op::Reshape { x } => res.push((*x, gy.to_vec())),
            Op::ChannelBias { x, b, c, hw } => {
                if self.needs(*b) {
                    let mut gb = vec![0.0; *c];
                    for (i, g) in gy.iter().enumerate() {
                        gb[(i / hw) % c] += g;
                    }
                    res.push((*b, gb));
                }
                res.push((*x, gy.to_vec()));
            }
            Op::ChannelMul { x, gate, hw } => {
                let xs = self.f64s(*x);
                let gs = self.f64s(*gate);
                if self.needs(*gate) {
                    let gg: Vec<f64> = (0..gs.len())
                        .map(|p| {
                            gy[p * hw..(p + 1) * hw]
                                .iter()
                                .zip(&xs[p * hw..(p + 1) * hw])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    res.push((*gate, gg));
                }
                res.push((*x, gy.iter().enumerate().map(|(i, g)| g * gs[i / hw]).collect()));
            }
            Op::Add { a, b } => {
                res.push((*a, gy.to_vec()));
                res.push((*b, gy.to_vec()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.f64s(*a), self.f64s(*b));
                res.push((*a, gy.iter().zip(&bv).map(|(g, v)| g * v).collect()));
                res.push((*b, gy.iter().zip(&av).map(|(g, v)| g * v).collect()));
            }
            Op::Scale { x, factor } => res.push((*x, gy.iter().map(|g| g * factor).collect())),
            Op::Sum { x } => res.push((*x, vec![gy[0]; self.value(*x).numel()])),
            Op::Concat { a, b, ca, cb, hw } => {
                let n = out.shape()[0];
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                let per = (ca + cb) * hw;
                for i in 0..n {
                    let s = &gy[i * per..(i + 1) * per];
                    ga.extend_from_slice(&s[..ca * hw]);
                    gb.extend_from_slice(&s[ca * hw..]);
                }
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Op::Linear { x, w, b, dims: (n, f, o) } => {
                let (n, f, o) = (*n, *f, *o);
                if self.needs(*x) {
                    let wv = self.f64s(*w);
                    let mut gx = vec![0.0; n * f];
                    for i in 0..n {
                        for j in 0..o {
                            let g = gy[i * o + j];
                            for (d, wj) in gx[i * f..(i + 1) * f].iter_mut().zip(&wv[j * f..(j + 1) * f]) {
                                *d += g * wj;
                            }
                        }
                    }
                    res.push((*x, gx));
                }
                if self.needs(*w) {
                    let xv = self.f64s(*x);
                    let mut gw = vec![0.0; o * f];
                    for i in 0..n {
                        for j in 0..o {
                            let g = gy[i * o + j];
                            for (d, xi) in gw[j * f..(j + 1) * f].iter_mut().zip(&xv[i * f..(i + 1) * f]) {
                                *d += g * xi;
                            }
                        }
                    }
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; o];
                    for i in 0..n {
                        for j in 0..o {
                            gb[j] += gy[i * o + j];
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Op::CrossEntropy { logits, labels, probs, k, count } => {
                let mut g = vec![0.0; probs.len()];
                if *count > 0 {
                    let scale = gy[0] / *count as f64;
                    for (i, label) in labels.iter().enumerate() {
                        if let Some(l) = label {
                            for j in 0..*k {
                                let target = if j == *l { 1.0 } else { 0.0 };
                                g[i * k + j] = (probs[i * k + j] - target) * scale;
                            }
                        }
                    }
                }
                res.push((*logits, g));
            }
        }
        Ok(res)
    }
}
