//! Aligned multi-scale aggregation: residual channel blocks, flow-guided
//! alignment of neighbouring scales and the pyramid that chains them.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, Ctx, Init, ParamStore};
use crate::ops::{self, Conv2dGeometry};

pub use crate::ops::{bilinear_upsample, warp};

/// `relu(h + BN(conv(h)))` with `h = BN(conv1x1(x))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResBlock {
    pub fn new(name: &str, c_in: usize, c_out: usize) -> Self {
        ResBlock {
            conv1: Conv2d::pointwise(join(name, "conv1"), c_in, c_out),
            bn1: BatchNorm2d::new(join(name, "bn1"), c_out),
            conv2: Conv2d::pointwise(join(name, "conv2"), c_out, c_out),
            bn2: BatchNorm2d::new(join(name, "bn2"), c_out),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.out_channels
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.conv1.init(store, rng, Init::Kaiming);
        self.bn1.init(store);
        self.conv2.init(store, rng, Init::Kaiming);
        self.bn2.init(store);
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let c = ctx.tape.value(x).dims4()?.1;
        if c != self.conv1.in_channels {
            return Err(Error::shape(
                "res_block",
                alloc::format!("input has {} channels, block expects {}", c, self.conv1.in_channels),
            ));
        }
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let r = self.conv2.forward(ctx, h)?;
        let r = self.bn2.forward(ctx, r)?;
        let sum = ops::add(&mut ctx.tape, h, r)?;
        Ok(ops::relu(&mut ctx.tape, sum))
    }
}

/// Flow Alignment Module: predicts two offset fields from the concatenated
/// pair, warps each map with its field and sums the results.
#[derive(Debug, Clone)]
pub struct FlowAlign {
    channels: usize,
    flow_conv: Conv2d,
}

impl FlowAlign {
    pub fn new(name: &str, channels: usize, kernel: usize) -> Self {
        FlowAlign {
            channels,
            flow_conv: Conv2d::new(
                join(name, "flow"),
                2 * channels,
                4,
                kernel,
                Conv2dGeometry {
                    stride: 1,
                    padding: kernel / 2,
                },
            ),
        }
    }

    /// Zero weights and bias: the module starts out as a plain
    /// up-sample-and-add.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.flow_conv.init(store, rng, Init::Zeros);
    }

    /// Aligns the coarse `f_low` onto the grid of `f_high`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, f_low: Var, f_high: Var) -> Result<Var> {
        Ok(self.forward_with_flow(ctx, f_low, f_high)?.0)
    }

    /// Like [`FlowAlign::forward`], also returning the `(N, 4, H, W)` flow
    /// fields (channels 0..2 warp `f_high`, 2..4 the up-sampled `f_low`).
    pub fn forward_with_flow(&self, ctx: &mut Ctx<'_>, f_low: Var, f_high: Var) -> Result<(Var, Var)> {
        let (_, cl, _, _) = ctx.tape.value(f_low).dims4()?;
        let (_, ch, h, w) = ctx.tape.value(f_high).dims4()?;
        if cl != self.channels || ch != self.channels {
            return Err(Error::shape(
                "flow_align",
                alloc::format!("channels {} / {} vs module width {}", cl, ch, self.channels),
            ));
        }
        let up = ops::bilinear_upsample(&mut ctx.tape, f_low, (h, w))?;
        let pair = ops::concat(&mut ctx.tape, &[up, f_high], 1)?;
        let flows = self.flow_conv.forward(ctx, pair)?;
        let flow_down = ops::narrow(&mut ctx.tape, flows, 1, 0, 2)?;
        let flow_up = ops::narrow(&mut ctx.tape, flows, 1, 2, 2)?;
        let high = ops::warp(&mut ctx.tape, f_high, flow_down)?;
        let low = ops::warp(&mut ctx.tape, up, flow_up)?;
        Ok((ops::add(&mut ctx.tape, high, low)?, flows))
    }
}

/// How neighbouring scales are merged on the top-down path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Flow-aligned fusion.
    Aligned,
    /// Up-sample and add, as in a vanilla feature pyramid.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FafpnConfig {
    /// Input channels per scale, coarsest first.
    pub scale_channels: Vec<usize>,
    pub unified_channels: usize,
    /// Number of part masks consuming `F_mask` downstream.
    pub parts: usize,
    pub flow_kernel: usize,
    pub aggregation: Aggregation,
}

impl Default for FafpnConfig {
    fn default() -> Self {
        FafpnConfig {
            scale_channels: alloc::vec![256, 128, 64],
            unified_channels: 192,
            parts: 6,
            flow_kernel: 3,
            aggregation: Aggregation::Aligned,
        }
    }
}

impl FafpnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_channels.len() < 2 {
            return Err(Error::invalid("fafpn config", "at least two scales are required"));
        }
        if self.parts == 0 || !self.unified_channels.is_multiple_of(self.parts) {
            return Err(Error::invalid(
                "fafpn config",
                alloc::format!(
                    "unified channels {} not divisible by {} parts",
                    self.unified_channels,
                    self.parts
                ),
            ));
        }
        if self.flow_kernel.is_multiple_of(2) {
            return Err(Error::invalid("fafpn config", "flow kernel must be odd"));
        }
        Ok(())
    }
}

/// Outputs of the pyramid: the map that drives the part masks and the map
/// that is pooled into embeddings.
#[derive(Debug, Clone)]
pub struct FafpnOutput {
    pub mask: Var,
    pub reid: Var,
    /// Flow fields of each alignment step, coarse to fine; empty when
    /// summing.
    pub flows: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Fafpn {
    config: FafpnConfig,
    projections: Vec<ResBlock>,
    fams: Vec<FlowAlign>,
    mask_head: ResBlock,
    reid_head: ResBlock,
}

impl Fafpn {
    pub fn new(name: &str, config: FafpnConfig) -> Result<Self> {
        config.validate()?;
        let cu = config.unified_channels;
        let projections = config
            .scale_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| ResBlock::new(&join(name, &alloc::format!("proj{i}")), c, cu))
            .collect();
        let fams = (1..config.scale_channels.len())
            .map(|i| FlowAlign::new(&join(name, &alloc::format!("fam{i}")), cu, config.flow_kernel))
            .collect();
        Ok(Fafpn {
            projections,
            fams,
            mask_head: ResBlock::new(&join(name, "mask_head"), cu, cu),
            reid_head: ResBlock::new(&join(name, "reid_head"), cu, cu),
            config,
        })
    }

    pub fn config(&self) -> &FafpnConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for p in &self.projections {
            p.init(store, rng);
        }
        if self.config.aggregation == Aggregation::Aligned {
            for f in &self.fams {
                f.init(store, rng);
            }
        }
        self.mask_head.init(store, rng);
        self.reid_head.init(store, rng);
    }

    /// `maps` are ordered coarsest to finest and share the batch size.
    pub fn forward(&self, ctx: &mut Ctx<'_>, maps: &[Var]) -> Result<FafpnOutput> {
        if maps.len() != self.projections.len() {
            return Err(Error::invalid(
                "fafpn input",
                alloc::format!("{} maps for {} scales", maps.len(), self.projections.len()),
            ));
        }
        let mut agg: Option<Var> = None;
        let mut flows = Vec::new();
        for (i, (&map, proj)) in maps.iter().zip(&self.projections).enumerate() {
            let projected = proj.forward(ctx, map)?;
            agg = Some(match agg {
                None => projected,
                Some(coarse) => match self.config.aggregation {
                    Aggregation::Aligned => {
                        let (merged, flow) = self.fams[i - 1].forward_with_flow(ctx, coarse, projected)?;
                        flows.push(flow);
                        merged
                    }
                    Aggregation::Sum => {
                        let (_, _, h, w) = ctx.tape.value(projected).dims4()?;
                        let up = ops::bilinear_upsample(&mut ctx.tape, coarse, (h, w))?;
                        ops::add(&mut ctx.tape, up, projected)?
                    }
                },
            });
        }
        let finest = agg.expect("at least two scales");
        Ok(FafpnOutput {
            mask: self.mask_head.forward(ctx, finest)?,
            reid: self.reid_head.forward(ctx, finest)?,
            flows,
        })
    }
}
