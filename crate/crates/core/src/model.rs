//! The full appearance model: frozen backbone, ROI crops, pyramid, part
//! masks and embedding heads, plus the plain baseline used for ablations.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::neural_blocks::{Aggregation, Fafpn, FafpnConfig};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::objectives::{cross_entropy, soft_margin_triplet, total_loss, Classifiers, LossBreakdown, LossWeights};
use crate::ops;
use crate::representation::{EmbeddingHead, MaskVars, Mpmg, PartMasks, TargetEmbedding};
use crate::synthetic_world::{crop_targets, frames_to_tensor, FrameRecord, ToyBackbone, BACKBONE_CHANNELS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Flow-aligned pyramid, multi-part masks, part and global embeddings.
    FineTrack,
    /// Plain summing pyramid and global average pooling.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub unified_channels: usize,
    pub parts: usize,
    pub part_dim: usize,
    pub global_dim: usize,
    /// Number of training identities (classifier outputs).
    pub identities: usize,
    pub flow_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::FineTrack,
            unified_channels: 192,
            parts: 6,
            part_dim: 128,
            global_dim: 256,
            identities: 8,
            flow_kernel: 3,
        }
    }
}

/// Handles of one forward pass over a batch of targets.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `(N, D_g)`
    pub global: Var,
    /// `(N, K, D_p)`; absent for the baseline.
    pub parts: Option<Var>,
    pub masks: Option<MaskVars>,
    /// Pyramid flow fields, coarse to fine (FineTrack only).
    pub flows: Vec<Var>,
}

/// Loss values of one batch and its tape handle.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub triplet_degenerate: bool,
}

/// Appearance of a batch of targets, read back from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub targets: Vec<TargetEmbedding>,
    /// Per-target part and global masks (FineTrack only).
    pub masks: Option<PartMasks>,
    /// Per-target `(N, 4, h, w)` flow fields, coarse to fine.
    pub flows: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FineTrackModel {
    config: ModelConfig,
    backbone: ToyBackbone,
    fafpn: Fafpn,
    mpmg: Option<Mpmg>,
    head: EmbeddingHead,
    classifiers: Classifiers,
}

impl FineTrackModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.identities < 2 {
            return Err(Error::invalid("model config", "need at least two identities"));
        }
        let aggregation = match config.variant {
            Variant::FineTrack => Aggregation::Aligned,
            Variant::Baseline => Aggregation::Sum,
        };
        let fafpn = Fafpn::new(
            "fafpn",
            FafpnConfig {
                scale_channels: BACKBONE_CHANNELS.iter().rev().copied().collect(),
                unified_channels: config.unified_channels,
                parts: config.parts,
                flow_kernel: config.flow_kernel,
                aggregation,
            },
        )?;
        let mpmg = match config.variant {
            Variant::FineTrack => Some(Mpmg::new("mpmg", config.unified_channels, config.parts)?),
            Variant::Baseline => None,
        };
        Ok(FineTrackModel {
            backbone: ToyBackbone::new("backbone"),
            fafpn,
            mpmg,
            head: EmbeddingHead::new("embed", config.unified_channels, config.part_dim, config.global_dim),
            classifiers: Classifiers::new(
                "classifier",
                config.parts,
                config.part_dim,
                config.global_dim,
                config.identities,
            ),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh weights drawn from `seed`. The backbone draw comes first and
    /// does not depend on the variant, so both variants see identical
    /// backbone features for the same seed.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.backbone.init(&mut store, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        self.fafpn.init(&mut store, &mut rng);
        if let Some(m) = &self.mpmg {
            m.init(&mut store, &mut rng);
        }
        self.head.init(&mut store, &mut rng);
        self.classifiers.init(&mut store, &mut rng);
        store
    }

    /// ROI crops (coarsest first) of `targets`, each a frame index into
    /// `frames` and a box in pixels. The backbone is frozen, so crops are
    /// plain tensors.
    pub fn crops(&self, store: &ParamStore, frames: &[&FrameRecord], targets: &[(usize, BBox)]) -> Result<Vec<Tensor>> {
        let mut ctx = Ctx::new(store, Mode::Eval);
        let images = ctx.input(frames_to_tensor(frames)?);
        let maps = self.backbone.forward(&mut ctx, images)?;
        let crops = crop_targets(&mut ctx, &maps, targets)?;
        Ok(crops.into_iter().map(|c| ctx.tape.value(c).clone()).collect())
    }

    /// Pyramid, masks and embedding heads over precomputed crops.
    pub fn forward(&self, ctx: &mut Ctx<'_>, crops: &[Var]) -> Result<ModelOutput> {
        let pyramid = self.fafpn.forward(ctx, crops)?;
        match &self.mpmg {
            Some(mpmg) => {
                let masks = mpmg.forward(ctx, pyramid.mask)?;
                let e = self.head.forward(ctx, pyramid.reid, masks)?;
                Ok(ModelOutput {
                    global: e.global,
                    parts: Some(e.parts),
                    masks: Some(masks),
                    flows: pyramid.flows,
                })
            }
            None => Ok(ModelOutput {
                global: self.head.forward_global_average(ctx, pyramid.reid)?,
                parts: None,
                masks: None,
                flows: pyramid.flows,
            }),
        }
    }

    /// Training objective of the variant: the weighted five-term loss for
    /// FineTrack, global cross-entropy plus global triplet for the baseline.
    pub fn loss(
        &self,
        ctx: &mut Ctx<'_>,
        out: &ModelOutput,
        labels: &[usize],
        weights: LossWeights,
    ) -> Result<BatchLoss> {
        match out.parts {
            Some(parts) => {
                let t = total_loss(ctx, &self.classifiers, parts, out.global, labels, weights)?;
                Ok(BatchLoss {
                    total: t.total,
                    breakdown: t.breakdown(&ctx.tape),
                    triplet_degenerate: t.triplet_degenerate,
                })
            }
            None => {
                let logits = self.classifiers.global_logits(ctx, out.global)?;
                let cls = cross_entropy(&mut ctx.tape, logits, labels)?;
                let tri = soft_margin_triplet(&mut ctx.tape, out.global, labels)?;
                let total = ops::add(&mut ctx.tape, cls, tri.loss)?;
                let v = |x: Var| ctx.tape.value(x).item();
                Ok(BatchLoss {
                    total,
                    breakdown: LossBreakdown {
                        cls_global: v(cls),
                        tri_global: v(tri.loss),
                        total: v(total),
                        ..LossBreakdown::default()
                    },
                    triplet_degenerate: tri.degenerate(),
                })
            }
        }
    }

    /// Inference-mode embeddings of `targets`.
    pub fn embed(&self, store: &ParamStore, frames: &[&FrameRecord], targets: &[(usize, BBox)]) -> Result<Embeddings> {
        if targets.is_empty() {
            return Ok(Embeddings {
                targets: Vec::new(),
                masks: None,
                flows: Vec::new(),
            });
        }
        let crops = self.crops(store, frames, targets)?;
        let mut ctx = Ctx::new(store, Mode::Eval);
        let vars: Vec<Var> = crops.into_iter().map(|c| ctx.input(c)).collect();
        let out = self.forward(&mut ctx, &vars)?;
        let global = ctx.tape.value(out.global);
        let targets = match out.parts {
            Some(p) => TargetEmbedding::from_batch(global, ctx.tape.value(p))?,
            None => {
                let (n, d) = global.dims2()?;
                (0..n)
                    .map(|i| TargetEmbedding {
                        global: global.data()[i * d..(i + 1) * d].to_vec(),
                        parts: Vec::new(),
                    })
                    .collect()
            }
        };
        let masks = out.masks.map(|m| PartMasks {
            part: ctx.tape.value(m.part).clone(),
            global: ctx.tape.value(m.global).clone(),
        });
        if targets
            .iter()
            .any(|t| t.global.iter().chain(t.parts.iter().flatten()).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite { what: "embedding" });
        }
        let flows = out.flows.iter().map(|&f| ctx.tape.value(f).clone()).collect();
        Ok(Embeddings { targets, masks, flows })
    }
}
