//! Parameter storage and the handful of layers the networks are built from.
//!
//! Layers do not own weights. They know their hierarchical parameter names
//! and look the tensors up in a [`ParamStore`] through a [`Ctx`] at forward
//! time, so a single store can be checkpointed as a flat name → array map.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{self, BatchStats, Conv2dGeometry};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;

/// Trainable parameters plus non-trainable buffers (BN running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copies every entry whose name starts with `prefix` from `other`.
    pub fn merge_prefixed(&mut self, other: &ParamStore, prefix: &str) {
        for (k, v) in other.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.params.insert(k.clone(), v.clone());
        }
        for (k, v) in other.buffers.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.buffers.insert(k.clone(), v.clone());
        }
    }

    /// Folds training-mode batch statistics into running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats)], momentum: f64) {
        for (name, s) in stats {
            if let Some(rm) = self.buffers.get_mut(&alloc::format!("{name}.running_mean")) {
                for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = (1.0 - momentum) * *r + momentum * m;
                }
            }
            if let Some(rv) = self.buffers.get_mut(&alloc::format!("{name}.running_var")) {
                for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN; parameters are differentiable leaves.
    Train,
    /// Running statistics in BN; parameters are constants.
    Eval,
}

/// One forward pass: the tape, the parameters bound onto it, and the BN
/// statistics observed along the way.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    mode: Mode,
    bound: BTreeMap<String, Var>,
    stats: Vec<(String, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            mode,
            bound: BTreeMap::new(),
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Binds the named parameter onto the tape (once per pass).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self
            .store
            .param(name)
            .ok_or_else(|| Error::invalid("parameter", alloc::format!("`{name}` missing from store")))?
            .clone();
        let v = match self.mode {
            Mode::Train => self.tape.leaf(value),
            Mode::Eval => self.tape.constant(value),
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    fn record_stats(&mut self, name: &str, stats: BatchStats) {
        self.stats.push((name.to_string(), stats));
    }

    pub fn batch_stats(&self) -> &[(String, BatchStats)] {
        &self.stats
    }

    /// Backpropagates `root` and returns the gradient of every bound
    /// parameter that received one.
    pub fn param_grads(&self, root: Var) -> BTreeMap<String, Tensor> {
        let mut grads: Gradients = self.tape.backward(root);
        self.bound
            .iter()
            .filter_map(|(k, v)| grads.take(*v).map(|g| (k.clone(), g)))
            .collect()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// How a fresh layer's weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal on fan-in.
    Kaiming,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: Conv2dGeometry,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: Conv2dGeometry,
    ) -> Self {
        Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            geom,
        }
    }

    pub fn pointwise(name: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        Self::new(name, in_channels, out_channels, 1, Conv2dGeometry::POINTWISE)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R, init: Init) {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        let weight = match init {
            Init::Kaiming => {
                let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
                normal_tensor(rng, &shape, libm::sqrt(2.0 / fan_in))
            }
            Init::Zeros => Tensor::zeros(&shape),
        };
        store.insert_param(join(&self.name, "weight"), weight);
        store.insert_param(join(&self.name, "bias"), Tensor::zeros(&[self.out_channels]));
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(&join(&self.name, "weight"))?;
        let b = ctx.param(&join(&self.name, "bias"))?;
        ops::conv2d(&mut ctx.tape, x, w, Some(b), self.geom)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            channels,
        }
    }

    /// Identity affine transform, running mean 0 and variance 1.
    pub fn init(&self, store: &mut ParamStore) {
        let c = self.channels;
        store.insert_param(join(&self.name, "weight"), Tensor::ones(&[c]));
        store.insert_param(join(&self.name, "bias"), Tensor::zeros(&[c]));
        store.insert_buffer(join(&self.name, "running_mean"), Tensor::zeros(&[c]));
        store.insert_buffer(join(&self.name, "running_var"), Tensor::ones(&[c]));
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = ctx.param(&join(&self.name, "weight"))?;
        let beta = ctx.param(&join(&self.name, "bias"))?;
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ops::batch_norm_train(&mut ctx.tape, x, gamma, beta)?;
                ctx.record_stats(&self.name, stats);
                Ok(y)
            }
            Mode::Eval => {
                let missing = || Error::invalid("buffer", alloc::format!("running stats of `{}`", self.name));
                let store = ctx.store();
                let rm = store
                    .buffer(&join(&self.name, "running_mean"))
                    .ok_or_else(missing)?
                    .data()
                    .to_vec();
                let rv = store
                    .buffer(&join(&self.name, "running_var"))
                    .ok_or_else(missing)?
                    .data()
                    .to_vec();
                ops::batch_norm_eval(&mut ctx.tape, x, gamma, beta, &rm, &rv)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = 1.0 / libm::sqrt(self.in_features as f64);
        store.insert_param(
            join(&self.name, "weight"),
            uniform_tensor(rng, &[self.out_features, self.in_features], bound),
        );
        store.insert_param(join(&self.name, "bias"), Tensor::zeros(&[self.out_features]));
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(&join(&self.name, "weight"))?;
        let b = ctx.param(&join(&self.name, "bias"))?;
        ops::linear(&mut ctx.tape, x, w, Some(b))
    }
}
