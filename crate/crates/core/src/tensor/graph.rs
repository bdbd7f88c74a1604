//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in execution order, so node ids form a topological
//! order and backward is a single reverse sweep. Each node carries the tag of
//! the network that was active when it was created; every executed forward or
//! backward primitive is appended to the graph's [`OpTrace`].

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{self, BatchNormCache, ConvGeom, ConvParams, PoolParams};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owning network of a primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetTag {
    Extractor,
    Compensator,
    Labeler,
    FeatureAdversary,
    LabelAdversary,
    /// Loss heads and glue outside any network.
    Objective,
}

impl NetTag {
    pub const NETWORKS: [NetTag; 5] =
        [NetTag::Extractor, NetTag::Compensator, NetTag::Labeler, NetTag::FeatureAdversary, NetTag::LabelAdversary];

    pub fn short(self) -> &'static str {
        match self {
            NetTag::Extractor => "E",
            NetTag::Compensator => "C",
            NetTag::Labeler => "L",
            NetTag::FeatureAdversary => "A_f",
            NetTag::LabelAdversary => "A_l",
            NetTag::Objective => "loss",
        }
    }
}

impl fmt::Display for NetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub primitive: &'static str,
    pub tag: NetTag,
}

/// Ordered record of every primitive executed on a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpTrace {
    records: Vec<TraceRecord>,
}

impl OpTrace {
    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains_tag(&self, tag: NetTag) -> bool {
        self.records.iter().any(|r| r.tag == tag)
    }

    pub fn tags(&self) -> Vec<NetTag> {
        let mut out: Vec<NetTag> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.tag) {
                out.push(r.tag);
            }
        }
        out
    }

    fn push(&mut self, primitive: &'static str, tag: NetTag) {
        self.records.push(TraceRecord { primitive, tag });
    }
}

/// Nonlinearity applied elementwise: `max(x, slope·x)` for `slope ∈ [0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }

    fn primitive(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
    }
}

/// Batch-norm statistics mode.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with fixed running estimates.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in train mode; the variance is the
/// unbiased estimate used for running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, cache: BatchNormCache<T>, train: bool },
    Activation { input: Var, slope: T, kind: Activation },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    Softmax { input: Var },
    CrossEntropy { scores: Var, probs: Vec<T>, targets: Vec<Option<usize>>, count: usize },
    LeastSquares { input: Var, target: T },
}

impl<T> Op<T> {
    fn primitive(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::BatchNorm { .. } => "batch_norm2d",
            Op::Activation { kind, .. } => kind.primitive(),
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::LeastSquares { .. } => "least_squares",
        }
    }

    fn backward_primitive(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d_backward",
            Op::MaxPool2d { .. } => "max_pool2d_backward",
            Op::BatchNorm { .. } => "batch_norm2d_backward",
            Op::Activation { kind: Activation::Relu, .. } => "relu_backward",
            Op::Activation { .. } => "leaky_relu_backward",
            Op::Add { .. } => "add_backward",
            Op::Mul { .. } => "mul_backward",
            Op::Scale { .. } => "scale_backward",
            Op::Sum { .. } => "sum_backward",
            Op::Softmax { .. } => "softmax_backward",
            Op::CrossEntropy { .. } => "cross_entropy_backward",
            Op::LeastSquares { .. } => "least_squares_backward",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    tag: NetTag,
}

/// A single forward computation and its reverse sweep.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    trace: OpTrace,
    tag: NetTag,
    branches: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            trace: OpTrace::default(),
            tag: NetTag::Objective,
            branches: FNV_OFFSET,
        }
    }

    /// Set the tag recorded for subsequent primitives; returns the previous tag.
    pub fn set_tag(&mut self, tag: NetTag) -> NetTag {
        std::mem::replace(&mut self.tag, tag)
    }

    pub fn tag(&self) -> NetTag {
        self.tag
    }

    pub fn trace(&self) -> &OpTrace {
        &self.trace
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if !matches!(op, Op::Leaf) {
            self.trace.push(op.primitive(), self.tag);
        }
        self.nodes.push(Node { value, op, requires_grad, tag: self.tag });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, p: ConvParams) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, kcin, kh, kw] = self.value(kernel).dims4("conv2d")?;
        if p.stride == 0 || p.dilation == 0 {
            return Err(Error::shape("conv2d", "stride and dilation must be at least 1"));
        }
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} do not match kernel input channels {kcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel height/width {kh}x{kw} must be odd")));
        }
        if let Some(b) = bias {
            if self.dims(b) != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias dims {:?} do not match output channels {cout}", self.dims(b)),
                ));
            }
        }
        let ho = kernels::conv_out_len("height", h, kh, &p)?;
        let wo = kernels::conv_out_len("width", w, kw, &p)?;
        let geom = ConvGeom { n, cin, h, w, cout, kh, kw, ho, wo, p };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.rg(&[input, kernel]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(vec![n, cout, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, rg))
    }

    /// Hash of every piecewise decision taken so far (pool argmax, activation
    /// sign). Two forward passes with equal signatures lie on the same smooth
    /// piece of the function.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    fn mix_branch(&mut self, v: u64) {
        self.branches = (self.branches ^ v).wrapping_mul(FNV_PRIME);
    }

    pub fn max_pool2d(&mut self, input: Var, p: PoolParams) -> Result<Var> {
        let dims = self.value(input).dims4("max_pool2d")?;
        if p.window == 0 || p.stride == 0 {
            return Err(Error::shape("max_pool2d", "window and stride must be at least 1"));
        }
        if p.padding > p.window / 2 {
            return Err(Error::shape("max_pool2d", "padding must be less than half the window"));
        }
        let ho = kernels::pool_out_len("height", dims[2], &p)?;
        let wo = kernels::pool_out_len("width", dims[3], &p)?;
        let (out, argmax) = kernels::max_pool_forward(self.value(input).data(), dims, &p, ho, wo);
        for &i in &argmax {
            self.mix_branch(i as u64);
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![dims[0], dims[1], ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, rg))
    }

    /// Batch normalization. In [`NormStats::Batch`] mode the observed batch
    /// statistics are returned so the caller can update running estimates.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let dims = self.value(input).dims4("batch_norm2d")?;
        let c = dims[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.dims(v) != [c] {
                return Err(Error::shape(
                    "batch_norm2d",
                    format!("{name} dims {:?} do not match channels {c}", self.dims(v)),
                ));
            }
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let (out, cache, observed, train) = match stats {
            NormStats::Batch => {
                let m = dims[0] * dims[2] * dims[3];
                if m < 2 {
                    return Err(Error::shape(
                        "batch_norm2d",
                        format!("train mode needs at least 2 values per channel, got {m} (batch × height × width)"),
                    ));
                }
                let (y, cache) = kernels::batch_norm_train(x, dims, g, b, eps);
                let correction = T::of(m as f64 / (m - 1) as f64);
                let observed =
                    BatchStats { mean: cache.mean.clone(), var: cache.var.iter().map(|v| *v * correction).collect() };
                (y, cache, Some(observed), true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm2d", "running statistics do not match channels"));
                }
                let (y, cache) = kernels::batch_norm_eval(x, dims, g, b, mean, var, eps);
                (y, cache, None, false)
            }
        };
        let rg = self.rg(&[input, gamma, beta]);
        let value = Tensor::new(dims.to_vec(), out)?;
        let v = self.push(value, Op::BatchNorm { input, gamma, beta, cache, train }, rg);
        Ok((v, observed))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let slope = kind.slope();
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!("activation slope {slope} outside [0, 1)")));
        }
        let s = T::of(slope);
        let x = self.value(input);
        let out: Vec<T> = x
            .data()
            .iter()
            .map(|v| {
                if *v > T::zero() {
                    *v
                } else if s == T::zero() {
                    T::zero()
                } else {
                    s * *v
                }
            })
            .collect();
        let signs: Vec<u64> = x.data().iter().map(|v| u64::from(*v > T::zero())).collect();
        let value = Tensor::new(x.dims().to_vec(), out)?;
        for b in signs {
            self.mix_branch(b);
        }
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Activation { input, slope: s, kind }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            let axis = da.iter().zip(db).position(|(x, y)| x != y);
            let detail = match axis {
                Some(i) => format!("dimension {i} differs: {} vs {}", da[i], db[i]),
                None => format!("rank differs: {} vs {}", da.len(), db.len()),
            };
            return Err(Error::shape(op, format!("dims {da:?} and {db:?} mismatch ({detail})")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("elementwise_add", a, b)?;
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(self.dims(a).to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("elementwise_mul", a, b)?;
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x * *y).collect();
        let value = Tensor::new(self.dims(a).to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.dims().to_vec(), x.data().iter().map(|v| *v * factor).collect()).expect("same dims");
        let rg = self.requires_grad(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = kernels::sum(self.value(input).data());
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// Softmax across the channel axis of an `N × K × H × W` map.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let dims = self.value(input).dims4("softmax")?;
        let out = kernels::softmax_channels(self.value(input).data(), dims);
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::new(dims.to_vec(), out)?, Op::Softmax { input }, rg))
    }

    /// Mean over non-ignored pixels of `-log softmax(scores)[label]`.
    pub fn cross_entropy(&mut self, scores: Var, labels: &Tensor<u8>, ignore: Option<u8>) -> Result<Var> {
        let dims = self.value(scores).dims4("cross_entropy")?;
        let [n, k, h, w] = dims;
        if labels.dims() != [n, h, w] {
            return Err(Error::shape(
                "cross_entropy",
                format!("labels dims {:?} do not match scores {n}×{h}×{w}", labels.dims()),
            ));
        }
        let targets: Vec<Option<usize>> = labels
            .data()
            .iter()
            .map(|&id| {
                if Some(id) == ignore {
                    Ok(None)
                } else if (id as usize) < k {
                    Ok(Some(id as usize))
                } else {
                    Err(Error::shape("cross_entropy", format!("class id {id} is not below {k} classes")))
                }
            })
            .collect::<Result<_>>()?;
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::InvalidArgument("cross_entropy: every pixel is ignored".into()));
        }
        let x = self.value(scores).data();
        let probs = kernels::softmax_channels(x, dims);
        let hw = h * w;
        let mut total = T::zero();
        for b in 0..n {
            let base = b * k * hw;
            for p in 0..hw {
                let Some(t) = targets[b * hw + p] else { continue };
                let mut mx = T::neg_infinity();
                for c in 0..k {
                    mx = mx.max(x[base + c * hw + p]);
                }
                let mut z = T::zero();
                for c in 0..k {
                    z += (x[base + c * hw + p] - mx).exp();
                }
                total += z.ln() + mx - x[base + t * hw + p];
            }
        }
        let loss = total / T::of(count as f64);
        let rg = self.requires_grad(scores);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { scores, probs, targets, count }, rg))
    }

    /// `½ · mean((x − target)²)` over every element of `input`.
    pub fn least_squares(&mut self, input: Var, target: T) -> Var {
        let x = self.value(input).data();
        let mut acc = T::zero();
        for v in x {
            let d = *v - target;
            acc += d * d;
        }
        let loss = T::of(0.5) * (acc / T::of(x.len() as f64));
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(loss), Op::LeastSquares { input, target }, rg)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    /// Calling it again without [`zero_grads`](Self::zero_grads) adds on top.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).dims().to_vec()));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        let Graph { nodes, leaf_grads, trace, .. } = self;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                accumulate(&mut leaf_grads[id], g);
                continue;
            }
            trace.push(node.op.backward_primitive(), node.tag);
            let wants = |v: &Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, kernel, bias, geom } => {
                    let want = [wants(input), wants(kernel), bias.is_some_and(|b| wants(&b))];
                    let cg = kernels::conv2d_backward(
                        nodes[input.0].value.data(),
                        nodes[kernel.0].value.data(),
                        &g,
                        geom,
                        want,
                    );
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if let Some(dk) = cg.kernel {
                        accumulate(&mut grads[kernel.0], dk);
                    }
                    if let (Some(b), Some(db)) = (bias, cg.bias) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    let mut dx = vec![T::zero(); nodes[input.0].value.len()];
                    for (gv, &i) in g.iter().zip(argmax) {
                        dx[i] += *gv;
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::BatchNorm { input, gamma, beta, cache, train } => {
                    let dims = nodes[input.0].value.dims4("batch_norm2d")?;
                    let (dx, dg, db) = kernels::batch_norm_backward(
                        &g,
                        dims,
                        nodes[gamma.0].value.data(),
                        cache,
                        *train,
                        wants(input),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if wants(gamma) {
                        accumulate(&mut grads[gamma.0], dg);
                    }
                    if wants(beta) {
                        accumulate(&mut grads[beta.0], db);
                    }
                }
                Op::Activation { input, slope, .. } => {
                    let x = nodes[input.0].value.data();
                    let dx = g.iter().zip(x).map(|(gv, xv)| if *xv > T::zero() { *gv } else { *slope * *gv }).collect();
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Add { a, b } => {
                    if wants(a) && wants(b) {
                        accumulate(&mut grads[a.0], g.clone());
                        accumulate(&mut grads[b.0], g);
                    } else if wants(a) {
                        accumulate(&mut grads[a.0], g);
                    } else {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.iter().zip(vb).map(|(x, y)| *x * *y).collect());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g.iter().zip(va).map(|(x, y)| *x * *y).collect());
                    }
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads[input.0], g.iter().map(|v| *v * *factor).collect());
                }
                Op::Sum { input } => {
                    accumulate(&mut grads[input.0], vec![g[0]; nodes[input.0].value.len()]);
                }
                Op::Softmax { input } => {
                    let dims = node.value.dims4("softmax")?;
                    let [n, k, h, w] = dims;
                    let hw = h * w;
                    let y = node.value.data();
                    let mut dx = vec![T::zero(); y.len()];
                    for b in 0..n {
                        let base = b * k * hw;
                        for p in 0..hw {
                            let mut s = T::zero();
                            for c in 0..k {
                                s += g[base + c * hw + p] * y[base + c * hw + p];
                            }
                            for c in 0..k {
                                let i = base + c * hw + p;
                                dx[i] = y[i] * (g[i] - s);
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::CrossEntropy { scores, probs, targets, count } => {
                    let [n, k, h, w] = nodes[scores.0].value.dims4("cross_entropy")?;
                    let hw = h * w;
                    let scale = g[0] / T::of(*count as f64);
                    let mut dx = vec![T::zero(); probs.len()];
                    for b in 0..n {
                        let base = b * k * hw;
                        for p in 0..hw {
                            let Some(t) = targets[b * hw + p] else { continue };
                            for c in 0..k {
                                let i = base + c * hw + p;
                                let onehot = if c == t { T::one() } else { T::zero() };
                                dx[i] = (probs[i] - onehot) * scale;
                            }
                        }
                    }
                    accumulate(&mut grads[scores.0], dx);
                }
                Op::LeastSquares { input, target } => {
                    let x = nodes[input.0].value.data();
                    let scale = g[0] / T::of(x.len() as f64);
                    accumulate(&mut grads[input.0], x.iter().map(|v| (*v - *target) * scale).collect());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += *v;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let k = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, Some(b), ConvParams::new(1, 1, 0)).unwrap();
        assert_eq!(g.dims(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 5, 5]));
        let k = g.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let err = g.conv2d(x, k, None, ConvParams::new(1, 1, 1)).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let k = g.constant(Tensor::zeros(&[2, 3, 9, 9]));
        let err = g.conv2d(x, k, None, ConvParams::new(1, 1, 0)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn pool_two_by_two() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.max_pool2d(x, PoolParams::new(2, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let err = g.max_pool2d(x, PoolParams::new(3, 1)).unwrap_err();
        assert!(err.to_string().contains("larger"), "{err}");
    }

    #[test]
    fn pool_ties_route_to_first_index() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::filled(&[1, 1, 4, 4], 2.0));
        let y = g.max_pool2d(x, PoolParams::new(2, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[2.0; 4]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        let mut expected = [0.0; 16];
        for i in [0, 2, 8, 10] {
            expected[i] = 1.0;
        }
        assert_eq!(grad, &expected);
    }

    #[test]
    fn activations() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = g.constant(t(&[1], &[-2.0]));
        let y = g.activation(x, Activation::LeakyRelu(0.2)).unwrap();
        assert!((g.value(y).data()[0] + 0.4).abs() < 1e-15);
        assert!(g.activation(x, Activation::LeakyRelu(1.0)).is_err());
    }

    #[test]
    fn subgradient_at_zero_is_slope() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[0.0]));
        let y = g.activation(x, Activation::LeakyRelu(0.3)).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.3]);
    }

    #[test]
    fn add_identity_and_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let z = g.constant(Tensor::zeros(&[2]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let id = g.add(a, z).unwrap();
        assert_eq!(g.value(id).data(), g.value(a).data());
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn backward_basic_identities() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[4], &[1.0, -2.0, 3.5, 0.25]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[4], &[1.0, -2.0, 3.5, 0.25]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        assert_eq!(g.grad(x).unwrap(), g.value(x).data());
    }

    #[test]
    fn backward_accumulates_and_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn trace_lists_primitives_in_order() {
        let mut g = Graph::<f64>::new();
        g.set_tag(NetTag::Extractor);
        let x = g.param(Tensor::filled(&[1, 1, 4, 4], 1.0));
        let k = g.param(Tensor::filled(&[1, 1, 3, 3], 0.5));
        let c = g.conv2d(x, k, None, ConvParams::same(3, 1)).unwrap();
        let r = g.relu(c).unwrap();
        g.set_tag(NetTag::Objective);
        let l = g.least_squares(r, 0.0);
        let names: Vec<_> = g.trace().records().iter().map(|r| (r.primitive, r.tag)).collect();
        assert_eq!(
            names,
            vec![("conv2d", NetTag::Extractor), ("relu", NetTag::Extractor), ("least_squares", NetTag::Objective)]
        );
        g.backward(l).unwrap();
        let back: Vec<_> = g.trace().records()[3..].iter().map(|r| r.primitive).collect();
        assert_eq!(back, vec!["least_squares_backward", "relu_backward", "conv2d_backward"]);
    }

    #[test]
    fn cross_entropy_rejects_all_ignored() {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::zeros(&[1, 4, 1, 2]));
        let labels = Tensor::new(vec![1, 1, 2], vec![255u8, 255]).unwrap();
        assert!(g.cross_entropy(s, &labels, Some(255)).is_err());
        let labels = Tensor::new(vec![1, 1, 2], vec![0u8, 4]).unwrap();
        assert!(g.cross_entropy(s, &labels, None).is_err());
    }

    #[test]
    fn batch_norm_needs_two_values_per_channel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let ga = g.constant(Tensor::filled(&[2], 1.0));
        let be = g.constant(Tensor::zeros(&[2]));
        assert!(g.batch_norm2d(x, ga, be, NormStats::Batch, 1e-5).is_err());
        let (_, stats) =
            g.batch_norm2d(x, ga, be, NormStats::Running { mean: &[0.0, 0.0], var: &[1.0, 1.0] }, 1e-5).unwrap();
        assert!(stats.is_none());
    }
}
