//! Part-mask generation and conversion of pyramid outputs into global and
//! part embeddings.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::linalg::{normalize_in_place, Trans};
use crate::nn::{join, Conv2d, Ctx, Init, Linear, ParamStore};
use crate::ops;
use crate::tensor::Tensor;

/// Denominator guard of [`weighted_pool`].
pub const POOL_EPS: f64 = 1e-6;
pub const GLOBAL_DIM: usize = 256;
pub const PART_DIM: usize = 128;
pub const NUM_PARTS: usize = 6;

/// Mask-weighted average pooling with the [`POOL_EPS`] guard.
pub fn weighted_pool(ctx: &mut Ctx<'_>, features: Var, mask: Var) -> Result<Var> {
    ops::weighted_pool(&mut ctx.tape, features, mask, POOL_EPS)
}

/// One part-mask generator: non-local self-attention over the block
/// followed by a 1×1 conv and a sigmoid.
#[derive(Debug, Clone)]
pub struct Pmg {
    channels: usize,
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    mask: Conv2d,
}

impl Pmg {
    pub fn new(name: &str, channels: usize) -> Self {
        Pmg {
            channels,
            query: Conv2d::pointwise(join(name, "query"), channels, channels),
            key: Conv2d::pointwise(join(name, "key"), channels, channels),
            value: Conv2d::pointwise(join(name, "value"), channels, channels),
            mask: Conv2d::pointwise(join(name, "mask"), channels, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.query.init(store, rng, Init::Kaiming);
        self.key.init(store, rng, Init::Kaiming);
        self.value.init(store, rng, Init::Kaiming);
        self.mask.init(store, rng, Init::Kaiming);
    }

    /// `(N, C/K, H, W) -> (N, 1, H, W)` with values in `(0, 1)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, block: Var) -> Result<Var> {
        let (n, c, h, w) = ctx.tape.value(block).dims4()?;
        if c != self.channels {
            return Err(Error::shape(
                "pmg",
                alloc::format!("block has {} channels, generator expects {}", c, self.channels),
            ));
        }
        let p = h * w;
        let q = self.query.forward(ctx, block)?;
        let k = self.key.forward(ctx, block)?;
        let v = self.value.forward(ctx, block)?;
        let t = &mut ctx.tape;
        let q = ops::reshape(t, q, &[n, c, p])?;
        let k = ops::reshape(t, k, &[n, c, p])?;
        let v = ops::reshape(t, v, &[n, c, p])?;
        // scores[i, j] = <q_i, k_j> / sqrt(c); softmax over key positions j
        let scores = ops::batch_matmul(t, q, Trans::Yes, k, Trans::No)?;
        let scores = ops::scale(t, scores, 1.0 / libm::sqrt(c as f64));
        let attn = ops::softmax_last(t, scores)?;
        let attended = ops::batch_matmul(t, v, Trans::No, attn, Trans::Yes)?;
        let attended = ops::reshape(t, attended, &[n, c, h, w])?;
        let refined = ops::add(t, block, attended)?;
        let logits = self.mask.forward(ctx, refined)?;
        Ok(ops::sigmoid(&mut ctx.tape, logits))
    }
}

/// Tape handles of the part and global masks.
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    /// `(N, K, H, W)`
    pub part: Var,
    /// `(N, 1, H, W)`, the channel-wise max of `part`.
    pub global: Var,
}

/// Materialized masks of a batch of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMasks {
    pub part: Tensor,
    pub global: Tensor,
}

/// K parallel generators with independent parameters, one per contiguous
/// channel block of `F_mask`.
#[derive(Debug, Clone)]
pub struct Mpmg {
    generators: Vec<Pmg>,
    block_channels: usize,
}

impl Mpmg {
    pub fn new(name: &str, unified_channels: usize, parts: usize) -> Result<Self> {
        if parts == 0 || !unified_channels.is_multiple_of(parts) {
            return Err(Error::invalid(
                "mpmg",
                alloc::format!("{} channels cannot be split into {} blocks", unified_channels, parts),
            ));
        }
        let block_channels = unified_channels / parts;
        Ok(Mpmg {
            generators: (0..parts)
                .map(|k| Pmg::new(&join(name, &alloc::format!("pmg{k}")), block_channels))
                .collect(),
            block_channels,
        })
    }

    pub fn parts(&self) -> usize {
        self.generators.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for g in &self.generators {
            g.init(store, rng);
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, f_mask: Var) -> Result<MaskVars> {
        let c = ctx.tape.value(f_mask).dims4()?.1;
        if c != self.block_channels * self.generators.len() {
            return Err(Error::shape(
                "mpmg",
                alloc::format!(
                    "F_mask has {} channels, expected {}",
                    c,
                    self.block_channels * self.parts()
                ),
            ));
        }
        let mut masks = Vec::with_capacity(self.parts());
        for (k, g) in self.generators.iter().enumerate() {
            let block = ops::narrow(&mut ctx.tape, f_mask, 1, k * self.block_channels, self.block_channels)?;
            masks.push(g.forward(ctx, block)?);
        }
        let part = ops::concat(&mut ctx.tape, &masks, 1)?;
        let global = ops::channel_max(&mut ctx.tape, part)?;
        Ok(MaskVars { part, global })
    }
}

/// Tape handles of a batch of embeddings.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    /// `(N, D_g)`
    pub global: Var,
    /// `(N, K, D_p)`
    pub parts: Var,
    pub masks: MaskVars,
}

/// The two fully connected heads: one shared across parts, one global.
#[derive(Debug, Clone)]
pub struct EmbeddingHead {
    part_fc: Linear,
    global_fc: Linear,
}

impl EmbeddingHead {
    pub fn new(name: &str, unified_channels: usize, part_dim: usize, global_dim: usize) -> Self {
        EmbeddingHead {
            part_fc: Linear::new(join(name, "part_fc"), unified_channels, part_dim),
            global_fc: Linear::new(join(name, "global_fc"), unified_channels, global_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.part_fc.init(store, rng);
        self.global_fc.init(store, rng);
    }

    /// Pools `f_reid` under each part mask and the global mask, then
    /// projects the pooled vectors.
    pub fn forward(&self, ctx: &mut Ctx<'_>, f_reid: Var, masks: MaskVars) -> Result<EmbeddingVars> {
        let (n, c, _, _) = ctx.tape.value(f_reid).dims4()?;
        let k = ctx.tape.shape(masks.part)[1];
        let mut pooled = Vec::with_capacity(k);
        for i in 0..k {
            let m = ops::narrow(&mut ctx.tape, masks.part, 1, i, 1)?;
            let v = weighted_pool(ctx, f_reid, m)?;
            pooled.push(ops::reshape(&mut ctx.tape, v, &[n, 1, c])?);
        }
        let stacked = ops::concat(&mut ctx.tape, &pooled, 1)?;
        let flat = ops::reshape(&mut ctx.tape, stacked, &[n * k, c])?;
        let parts = self.part_fc.forward(ctx, flat)?;
        let parts = ops::reshape(&mut ctx.tape, parts, &[n, k, self.part_fc.out_features])?;
        let g = weighted_pool(ctx, f_reid, masks.global)?;
        let global = self.global_fc.forward(ctx, g)?;
        Ok(EmbeddingVars { global, parts, masks })
    }

    /// Global-average-pooled global embedding only (the pooling of the
    /// plain baseline).
    pub fn forward_global_average(&self, ctx: &mut Ctx<'_>, f_reid: Var) -> Result<Var> {
        let (n, _, h, w) = ctx.tape.value(f_reid).dims4()?;
        let ones = ctx.input(Tensor::ones(&[n, 1, h, w]));
        let g = weighted_pool(ctx, f_reid, ones)?;
        self.global_fc.forward(ctx, g)
    }
}

/// One target's appearance: a global vector and K part vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEmbedding {
    pub global: Vec<f64>,
    pub parts: Vec<Vec<f64>>,
}

impl TargetEmbedding {
    /// Splits batched `(N, D_g)` and `(N, K, D_p)` tensors per target.
    pub fn from_batch(global: &Tensor, parts: &Tensor) -> Result<Vec<TargetEmbedding>> {
        let (n, _) = global.dims2()?;
        let ps = parts.shape();
        if ps.len() != 3 || ps[0] != n {
            return Err(Error::shape("TargetEmbedding::from_batch", "batch sizes differ"));
        }
        Ok((0..n)
            .map(|i| TargetEmbedding {
                global: global.row(i).to_vec(),
                parts: parts.slab(i).chunks(ps[2]).map(<[f64]>::to_vec).collect(),
            })
            .collect())
    }

    /// The association descriptor: every component scaled to unit length,
    /// concatenated (global first) and normalized again.
    pub fn association_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.global.len() + self.parts.iter().map(Vec::len).sum::<usize>());
        let mut push = |v: &[f64]| {
            let mut v = v.to_vec();
            normalize_in_place(&mut v, 1e-12);
            out.extend_from_slice(&v);
        };
        push(&self.global);
        for p in &self.parts {
            push(p);
        }
        normalize_in_place(&mut out, 1e-12);
        out
    }

    /// Unit-length global vector alone.
    pub fn global_unit(&self) -> Vec<f64> {
        let mut v = self.global.clone();
        normalize_in_place(&mut v, 1e-12);
        v
    }
}
