//! Desk-scale stand-in for a detector and its datasets: scripted videos of
//! textured sprites, a small strided convolutional backbone and ROI crops.

mod scene;

use alloc::vec::Vec;

use rand::Rng;

pub use scene::{
    degrade_detections, generate_sequence, identity_appearance, Actor, Appearance, Camera, Crossing, CrossingStyle,
    DetectionNoise, FrameRecord, Rgb, SceneScript,
};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{join, Conv2d, Ctx, Init, ParamStore};
use crate::ops::{self, Conv2dGeometry, Roi};
use crate::tensor::Tensor;

/// Strides of the returned maps, finest first.
pub const BACKBONE_STRIDES: [usize; 3] = [8, 16, 32];
/// Channels of the returned maps, finest first.
pub const BACKBONE_CHANNELS: [usize; 3] = [64, 128, 256];
/// ROI output size per scale, finest first.
pub const ROI_SIZES: [(usize, usize); 3] = [(16, 8), (8, 4), (4, 2)];

/// Five stride-2 3×3 convolutions with ReLU; the last three outputs are the
/// stride 8, 16 and 32 maps.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    convs: Vec<Conv2d>,
}

impl ToyBackbone {
    pub fn new(name: &str) -> Self {
        let widths = [3, 16, 32, 64, 128, 256];
        let geom = Conv2dGeometry { stride: 2, padding: 1 };
        ToyBackbone {
            convs: (0..5)
                .map(|i| {
                    Conv2d::new(
                        join(name, &alloc::format!("conv{i}")),
                        widths[i],
                        widths[i + 1],
                        3,
                        geom,
                    )
                })
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for c in &self.convs {
            c.init(store, rng, Init::Kaiming);
        }
    }

    /// `(N, 3, H, W)` images to three maps, finest (stride 8) first.
    pub fn forward(&self, ctx: &mut Ctx<'_>, images: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = ctx.tape.value(images).dims4()?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(
                "backbone input",
                alloc::format!("need (N, 3, H, W) with H, W multiples of 32, got ({c}, {h}, {w})"),
            ));
        }
        let mut x = images;
        let mut maps = Vec::with_capacity(3);
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(ctx, x)?;
            x = ops::relu(&mut ctx.tape, y);
            if i >= 2 {
                maps.push(x);
            }
        }
        Ok(maps)
    }
}

/// Stacks frames into one `(N, 3, H, W)` tensor scaled to `[0, 1]`.
pub fn frames_to_tensor(frames: &[&FrameRecord]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("frames", "no frames to stack"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return Err(Error::shape("frames_to_tensor", "frames differ in size"));
        }
        data.extend(f.planar());
    }
    Tensor::new(&[frames.len(), 3, h, w], data)
}

/// Crops every `(batch index, box)` pair from each backbone map (finest
/// first) and returns the crops coarsest first, as the pyramid consumes
/// them.
pub fn crop_targets(ctx: &mut Ctx<'_>, maps: &[Var], targets: &[(usize, BBox)]) -> Result<Vec<Var>> {
    if maps.len() != BACKBONE_STRIDES.len() {
        return Err(Error::invalid("crop_targets", "expected three backbone maps"));
    }
    let rois: Vec<Roi> = targets
        .iter()
        .map(|&(batch, b)| Roi {
            batch,
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        })
        .collect();
    let mut crops = Vec::with_capacity(maps.len());
    for ((&map, &stride), &size) in maps.iter().zip(&BACKBONE_STRIDES).zip(&ROI_SIZES).rev() {
        crops.push(ops::roi_align(&mut ctx.tape, map, &rois, size, stride as f64)?);
    }
    Ok(crops)
}
