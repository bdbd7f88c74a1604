//! Parameter storage and a small block interpreter shared by all five networks.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{conv_out_len, pool_out_len};
use crate::tensor::{Activation, BatchStats, ConvParams, Graph, NetTag, NormStats, PoolParams, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState<T> {
    pub name: String,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// Convolution, optionally followed by batch norm and an activation.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub weight: usize,
    /// Absent when batch norm follows.
    pub bias: Option<usize>,
    pub conv: ConvParams,
    /// `(gamma, beta, norm state)` indices.
    pub norm: Option<(usize, usize, usize)>,
    pub act: Option<Activation>,
}

#[derive(Clone, Debug)]
pub enum Block {
    Unit(ConvUnit),
    Pool(PoolParams),
    /// `relu(x + second(first(x)))`.
    Residual(ConvUnit, ConvUnit),
    /// Parallel unit chains whose outputs are summed.
    Branches(Vec<Vec<ConvUnit>>),
}

/// Graph leaves for one network's parameters.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Batch statistics observed during a train-mode pass, keyed by norm index.
#[derive(Clone, Debug)]
pub struct NormUpdates<T> {
    entries: Vec<(usize, BatchStats<T>)>,
}

impl<T> Default for NormUpdates<T> {
    fn default() -> Self {
        NormUpdates { entries: Vec::new() }
    }
}

impl<T> NormUpdates<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A built network: an ordered block list plus its parameters and running statistics.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    tag: NetTag,
    blocks: Vec<Block>,
    split: Option<usize>,
    in_channels: usize,
    params: Vec<Param<T>>,
    norms: Vec<NormState<T>>,
    mode: Mode,
}

impl<T: Scalar> Network<T> {
    pub fn tag(&self) -> NetTag {
        self.tag
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Block index where the prefix (`E1` for the extractor) ends.
    pub fn split(&self) -> Option<usize> {
        self.split
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[NormState<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormState<T>] {
        &mut self.norms
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter value.
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value.data() {
                for byte in v.bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Insert parameters as graph leaves; `trainable` leaves receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect();
        Bound { vars, trainable }
    }

    /// Bind caller-supplied parameter leaves (used by the gradient oracle).
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} parameter leaves, got {}",
                self.tag,
                self.params.len(),
                vars.len()
            )));
        }
        Ok(Bound { vars, trainable: true })
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var, upd: &mut NormUpdates<T>) -> Result<Var> {
        self.forward_range(g, b, x, 0..self.blocks.len(), upd)
    }

    /// Blocks before the split point.
    pub fn forward_prefix(&self, g: &mut Graph<T>, b: &Bound, x: Var, upd: &mut NormUpdates<T>) -> Result<Var> {
        let split = self.split_point()?;
        self.forward_range(g, b, x, 0..split, upd)
    }

    /// Blocks from the split point on.
    pub fn forward_suffix(&self, g: &mut Graph<T>, b: &Bound, x: Var, upd: &mut NormUpdates<T>) -> Result<Var> {
        let split = self.split_point()?;
        self.forward_range(g, b, x, split..self.blocks.len(), upd)
    }

    fn split_point(&self) -> Result<usize> {
        self.split.ok_or_else(|| Error::InvalidArgument(format!("{} has no split point", self.tag)))
    }

    fn forward_range(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        range: Range<usize>,
        upd: &mut NormUpdates<T>,
    ) -> Result<Var> {
        if range.start == 0 {
            let dims = g.value(x).dims4("forward")?;
            if dims[1] != self.in_channels {
                return Err(Error::shape(
                    "forward",
                    format!("{} expects {} input channels, got {}", self.tag, self.in_channels, dims[1]),
                ));
            }
        }
        let prev = g.set_tag(self.tag);
        let out = (|| {
            let mut h = x;
            for block in &self.blocks[range] {
                h = match block {
                    Block::Unit(u) => self.unit(g, b, h, u, upd)?,
                    Block::Pool(p) => g.max_pool2d(h, *p)?,
                    Block::Residual(first, second) => {
                        let a = self.unit(g, b, h, first, upd)?;
                        let a = self.unit(g, b, a, second, upd)?;
                        let s = g.add(a, h)?;
                        g.relu(s)?
                    }
                    Block::Branches(branches) => {
                        let mut acc: Option<Var> = None;
                        for chain in branches {
                            let mut y = h;
                            for u in chain {
                                y = self.unit(g, b, y, u, upd)?;
                            }
                            acc = Some(match acc {
                                Some(a) => g.add(a, y)?,
                                None => y,
                            });
                        }
                        acc.expect("at least one branch")
                    }
                };
            }
            Ok(h)
        })();
        g.set_tag(prev);
        out
    }

    fn unit(&self, g: &mut Graph<T>, b: &Bound, x: Var, u: &ConvUnit, upd: &mut NormUpdates<T>) -> Result<Var> {
        let mut h = g.conv2d(x, b.vars[u.weight], u.bias.map(|i| b.vars[i]), u.conv)?;
        if let Some((gamma, beta, ni)) = u.norm {
            let eps = T::of(BN_EPS);
            let state = &self.norms[ni];
            let stats = match self.mode {
                Mode::Train => NormStats::Batch,
                Mode::Eval => NormStats::Running { mean: state.running_mean.data(), var: state.running_var.data() },
            };
            let (y, observed) = g.batch_norm2d(h, b.vars[gamma], b.vars[beta], stats, eps)?;
            if let Some(s) = observed {
                upd.entries.push((ni, s));
            }
            h = y;
        }
        if let Some(act) = u.act {
            h = g.activation(h, act)?;
        }
        Ok(h)
    }

    /// Fold observed batch statistics into the running estimates.
    pub fn commit_norm_updates(&mut self, upd: NormUpdates<T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for (ni, s) in upd.entries {
            let st = &mut self.norms[ni];
            for (r, v) in st.running_mean.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * *v;
            }
            for (r, v) in st.running_var.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * *v;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Add the graph's leaf gradients into each parameter's accumulator.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, b: &Bound) {
        for (p, v) in self.params.iter_mut().zip(&b.vars) {
            if let Some(grad) = g.grad(*v) {
                for (a, d) in p.grad.data_mut().iter_mut().zip(grad) {
                    *a += *d;
                }
            }
        }
    }

    /// Propagate `[N, C, H, W]` through the block list without computing values.
    pub fn output_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.dims_through(input, 0..self.blocks.len())
    }

    pub fn prefix_output_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.dims_through(input, 0..self.split_point()?)
    }

    fn dims_through(&self, input: [usize; 4], range: Range<usize>) -> Result<[usize; 4]> {
        if input[1] != self.in_channels {
            return Err(Error::shape(
                "forward",
                format!("{} expects {} input channels, got {}", self.tag, self.in_channels, input[1]),
            ));
        }
        let unit_dims = |d: [usize; 4], u: &ConvUnit| -> Result<[usize; 4]> {
            let k = self.params[u.weight].value.dims();
            Ok([d[0], k[0], conv_out_len("height", d[2], k[2], &u.conv)?, conv_out_len("width", d[3], k[3], &u.conv)?])
        };
        let mut d = input;
        for block in &self.blocks[range] {
            d = match block {
                Block::Unit(u) => unit_dims(d, u)?,
                Block::Pool(p) => [d[0], d[1], pool_out_len("height", d[2], p)?, pool_out_len("width", d[3], p)?],
                Block::Residual(a, b) => unit_dims(unit_dims(d, a)?, b)?,
                Block::Branches(br) => {
                    let mut y = d;
                    for u in &br[0] {
                        y = unit_dims(y, u)?;
                    }
                    y
                }
            };
        }
        Ok(d)
    }
}

/// Incremental constructor used by the network builders.
pub(crate) struct NetBuilder<'r, T: Scalar, R: Rng> {
    tag: NetTag,
    in_channels: usize,
    blocks: Vec<Block>,
    split: Option<usize>,
    params: Vec<Param<T>>,
    norms: Vec<NormState<T>>,
    rng: &'r mut R,
}

/// Weight initialization rule.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Zero-mean normal with a fixed standard deviation.
    Normal(f64),
    /// Zero-mean normal with `std = sqrt(2 / fan_in)`.
    He,
}

impl<'r, T: Scalar, R: Rng> NetBuilder<'r, T, R> {
    pub fn new(tag: NetTag, in_channels: usize, rng: &'r mut R) -> Self {
        NetBuilder { tag, in_channels, blocks: Vec::new(), split: None, params: Vec::new(), norms: Vec::new(), rng }
    }

    fn add_param(&mut self, name: String, value: Tensor<T>) -> usize {
        let grad = Tensor::zeros(value.dims());
        self.params.push(Param { name, value, grad });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn unit(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        conv: ConvParams,
        init: Init,
        norm: bool,
        act: Option<Activation>,
    ) -> ConvUnit {
        let std = match init {
            Init::Normal(s) => s,
            Init::He => (2.0 / (cin * k * k) as f64).sqrt(),
        };
        let w = Tensor::randn(&[cout, cin, k, k], std, self.rng);
        let weight = self.add_param(format!("{name}.weight"), w);
        let bias = (!norm).then(|| self.add_param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        let norm = norm.then(|| {
            let gamma = self.add_param(format!("{name}.bn.gamma"), Tensor::filled(&[cout], T::one()));
            let beta = self.add_param(format!("{name}.bn.beta"), Tensor::zeros(&[cout]));
            self.norms.push(NormState {
                name: format!("{name}.bn"),
                running_mean: Tensor::zeros(&[cout]),
                running_var: Tensor::filled(&[cout], T::one()),
            });
            (gamma, beta, self.norms.len() - 1)
        });
        ConvUnit { weight, bias, conv, norm, act }
    }

    pub fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn mark_split(&mut self) {
        self.split = Some(self.blocks.len());
    }

    pub fn finish(self) -> Network<T> {
        Network {
            tag: self.tag,
            blocks: self.blocks,
            split: self.split,
            in_channels: self.in_channels,
            params: self.params,
            norms: self.norms,
            mode: Mode::Train,
        }
    }
}
