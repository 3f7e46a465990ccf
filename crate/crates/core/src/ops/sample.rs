//! Bilinear resampling: up-sampling, flow warping and ROI alignment.
//!
//! All three share the align-corners-false convention: pixel `i` of a grid
//! has its center at coordinate `i`, and a grid of size `n` spans
//! `[-0.5, n - 0.5]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default)]
struct Tap {
    index: usize,
    weight: f64,
}

/// A linear map gathering each output pixel from at most four source pixels
/// of the same channel.
struct Gather {
    src_shape: [usize; 4],
    out_shape: [usize; 4],
    /// Source batch index for every output batch entry.
    src_batch: Vec<usize>,
    /// Four taps per output `(batch, pixel)`; unused taps carry weight zero.
    taps: Vec<[Tap; 4]>,
}

impl Gather {
    fn apply(&self, src: &Tensor) -> Tensor {
        let [_, c, sh, sw] = self.src_shape;
        let [n, _, oh, ow] = self.out_shape;
        let (sp, op) = (sh * sw, oh * ow);
        let mut out = Tensor::zeros(&self.out_shape);
        let od = out.data_mut();
        for b in 0..n {
            let sb = self.src_batch[b];
            let taps = &self.taps[b * op..(b + 1) * op];
            for ch in 0..c {
                let s = &src.data()[(sb * c + ch) * sp..(sb * c + ch + 1) * sp];
                let o = &mut od[(b * c + ch) * op..(b * c + ch + 1) * op];
                for (slot, t) in o.iter_mut().zip(taps) {
                    *slot = t.iter().map(|tap| tap.weight * s[tap.index]).sum();
                }
            }
        }
        out
    }

    fn transpose_apply(&self, g: &Tensor) -> Tensor {
        let [_, c, sh, sw] = self.src_shape;
        let [n, _, oh, ow] = self.out_shape;
        let (sp, op) = (sh * sw, oh * ow);
        let mut gs = Tensor::zeros(&self.src_shape);
        let gd = gs.data_mut();
        for b in 0..n {
            let sb = self.src_batch[b];
            let taps = &self.taps[b * op..(b + 1) * op];
            for ch in 0..c {
                let go = &g.data()[(b * c + ch) * op..(b * c + ch + 1) * op];
                let s = &mut gd[(sb * c + ch) * sp..(sb * c + ch + 1) * sp];
                for (gv, t) in go.iter().zip(taps) {
                    for tap in t {
                        s[tap.index] += tap.weight * gv;
                    }
                }
            }
        }
        gs
    }
}

struct GatherOp {
    input: Var,
    gather: Gather,
}

impl GradFn for GatherOp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, _: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(self.gather.transpose_apply(g))]
    }
}

/// Source coordinate of output pixel `i` when resizing `src` pixels to `dst`.
fn resize_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let x = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = (libm::floor(x) as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, x - lo as f64)
}

/// Bilinear up-sampling of a `(N, C, h, w)` map to `(N, C, H, W)`.
pub fn bilinear_upsample(tape: &mut Tape, x: Var, target_hw: (usize, usize)) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (th, tw) = target_hw;
    if th < h || tw < w {
        return Err(Error::invalid(
            "upsample target",
            alloc::format!("{}x{} is smaller than source {}x{}", th, tw, h, w),
        ));
    }
    let rows: Vec<_> = (0..th).map(|i| resize_coord(i, h, th)).collect();
    let cols: Vec<_> = (0..tw).map(|j| resize_coord(j, w, tw)).collect();
    let mut plane = Vec::with_capacity(th * tw);
    for &(y0, y1, ly) in &rows {
        for &(x0, x1, lx) in &cols {
            plane.push([
                Tap {
                    index: y0 * w + x0,
                    weight: (1.0 - ly) * (1.0 - lx),
                },
                Tap {
                    index: y0 * w + x1,
                    weight: (1.0 - ly) * lx,
                },
                Tap {
                    index: y1 * w + x0,
                    weight: ly * (1.0 - lx),
                },
                Tap {
                    index: y1 * w + x1,
                    weight: ly * lx,
                },
            ]);
        }
    }
    let mut taps = Vec::with_capacity(n * plane.len());
    for _ in 0..n {
        taps.extend_from_slice(&plane);
    }
    let gather = Gather {
        src_shape: [n, c, h, w],
        out_shape: [n, c, th, tw],
        src_batch: (0..n).collect(),
        taps,
    };
    let out = gather.apply(tape.value(x));
    Ok(tape.push(out, GatherOp { input: x, gather }))
}

/// Corner weights for sampling at `(py, px)` with zero padding.
fn zero_padded_taps(py: f64, px: f64, h: usize, w: usize) -> [Tap; 4] {
    let mut taps = [Tap::default(); 4];
    if !(py > -1.0 && py < h as f64 && px > -1.0 && px < w as f64) {
        return taps;
    }
    let (fy, fx) = (libm::floor(py), libm::floor(px));
    let (wy, wx) = (py - fy, px - fx);
    let corners = [
        (fy, fx, (1.0 - wy) * (1.0 - wx)),
        (fy, fx + 1.0, (1.0 - wy) * wx),
        (fy + 1.0, fx, wy * (1.0 - wx)),
        (fy + 1.0, fx + 1.0, wy * wx),
    ];
    for (tap, (y, x, weight)) in taps.iter_mut().zip(corners) {
        if y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64 {
            *tap = Tap {
                index: y as usize * w + x as usize,
                weight,
            };
        }
    }
    taps
}

struct Warp {
    x: Var,
    flow: Var,
    gather: Gather,
}

impl GradFn for Warp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.flow]
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let gx = needs[0].then(|| self.gather.transpose_apply(g));
        let gflow = needs[1].then(|| {
            let x = tape.value(self.x);
            let flow = tape.value(self.flow);
            let (n, c, h, w) = x.dims4().expect("4-D");
            let p = h * w;
            let mut gf = Tensor::zeros(flow.shape());
            for b in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let pix = yy * w + xx;
                        let px = xx as f64 + flow.data()[(b * 2) * p + pix];
                        let py = yy as f64 + flow.data()[(b * 2 + 1) * p + pix];
                        if !(py > -1.0 && py < h as f64 && px > -1.0 && px < w as f64) {
                            continue;
                        }
                        let (fy, fx) = (libm::floor(py), libm::floor(px));
                        let (wy, wx) = (py - fy, px - fx);
                        let inside = |y: f64, x: f64| y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64;
                        let (mut dx, mut dy) = (0.0, 0.0);
                        for ch in 0..c {
                            let plane = &x.data()[(b * c + ch) * p..(b * c + ch + 1) * p];
                            let at = |y: f64, x: f64| {
                                if inside(y, x) {
                                    plane[y as usize * w + x as usize]
                                } else {
                                    0.0
                                }
                            };
                            let v00 = at(fy, fx);
                            let v01 = at(fy, fx + 1.0);
                            let v10 = at(fy + 1.0, fx);
                            let v11 = at(fy + 1.0, fx + 1.0);
                            let gv = g.data()[(b * c + ch) * p + pix];
                            dx += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                            dy += gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                        gf.data_mut()[(b * 2) * p + pix] = dx;
                        gf.data_mut()[(b * 2 + 1) * p + pix] = dy;
                    }
                }
            }
            gf
        });
        vec![gx, gflow]
    }
}

/// Resamples `x` at `p + flow(p)` for every pixel `p`.
///
/// `flow` is `(N, 2, H, W)` with channel 0 the horizontal and channel 1 the
/// vertical offset, in grid units. Samples outside the map read zero.
pub fn warp(tape: &mut Tape, x: Var, flow: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let fshape = tape.shape(flow);
    if fshape != [n, 2, h, w] {
        return Err(Error::shape(
            "warp",
            alloc::format!("flow {:?} does not match map {:?}", fshape, tape.shape(x)),
        ));
    }
    let p = h * w;
    let fd = tape.value(flow).data();
    let mut taps = Vec::with_capacity(n * p);
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let pix = yy * w + xx;
                let px = xx as f64 + fd[(b * 2) * p + pix];
                let py = yy as f64 + fd[(b * 2 + 1) * p + pix];
                taps.push(zero_padded_taps(py, px, h, w));
            }
        }
    }
    let gather = Gather {
        src_shape: [n, c, h, w],
        out_shape: [n, c, h, w],
        src_batch: (0..n).collect(),
        taps,
    };
    let out = gather.apply(tape.value(x));
    Ok(tape.push(out, Warp { x, flow, gather }))
}

/// A box in image pixels attached to one batch entry of a feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub batch: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Crops each ROI from `(N, C, H, W)` into a `(R, C, oh, ow)` grid.
///
/// Boxes are divided by `stride` (no rounding). Every output cell takes one
/// bilinear sample at its center, with coordinates clamped to the map.
pub fn roi_align(tape: &mut Tape, map: Var, rois: &[Roi], out_hw: (usize, usize), stride: f64) -> Result<Var> {
    let (n, c, h, w) = tape.value(map).dims4()?;
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 || rois.is_empty() {
        return Err(Error::invalid("roi_align", "empty output grid or no boxes"));
    }
    let mut taps = Vec::with_capacity(rois.len() * oh * ow);
    for roi in rois {
        if roi.batch >= n {
            return Err(Error::invalid("roi_align", "box batch index out of range"));
        }
        let (fx1, fy1) = (roi.x1 / stride, roi.y1 / stride);
        let (bw, bh) = ((roi.x2 - roi.x1) / stride, (roi.y2 - roi.y1) / stride);
        if !(bw > 0.0 && bh > 0.0) || !bw.is_finite() || !bh.is_finite() {
            return Err(Error::invalid(
                "roi_align",
                alloc::format!("degenerate box ({}, {}, {}, {})", roi.x1, roi.y1, roi.x2, roi.y2),
            ));
        }
        for i in 0..oh {
            let y = (fy1 + (i as f64 + 0.5) * bh / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            for j in 0..ow {
                let x = (fx1 + (j as f64 + 0.5) * bw / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (libm::floor(y) as usize, libm::floor(x) as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (ly, lx) = (y - y0 as f64, x - x0 as f64);
                taps.push([
                    Tap {
                        index: y0 * w + x0,
                        weight: (1.0 - ly) * (1.0 - lx),
                    },
                    Tap {
                        index: y0 * w + x1,
                        weight: (1.0 - ly) * lx,
                    },
                    Tap {
                        index: y1 * w + x0,
                        weight: ly * (1.0 - lx),
                    },
                    Tap {
                        index: y1 * w + x1,
                        weight: ly * lx,
                    },
                ]);
            }
        }
    }
    let gather = Gather {
        src_shape: [n, c, h, w],
        out_shape: [rois.len(), c, oh, ow],
        src_batch: rois.iter().map(|r| r.batch).collect(),
        taps,
    };
    let out = gather.apply(tape.value(map));
    Ok(tape.push(out, GatherOp { input: map, gather }))
}
