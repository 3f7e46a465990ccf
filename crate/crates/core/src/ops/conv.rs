use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Trans};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub const POINTWISE: Self = Conv2dGeometry { stride: 1, padding: 0 };
}

#[derive(Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], d: &Dims, cols: &mut [f64]) {
    let p = d.col_cols();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        dst[oy * d.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            x[(c * d.h + iy as usize) * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Dims, x: &mut [f64]) {
    let p = d.col_cols();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix as usize >= d.w {
                            continue;
                        }
                        x[(c * d.h + iy as usize) * d.w + ix as usize] += src[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

struct Conv2d {
    x: Var,
    weight: Var,
    bias: Option<Var>,
    dims: Dims,
}

impl GradFn for Conv2d {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.weight];
        v.extend(self.bias);
        v
    }

    fn backward(&self, tape: &Tape, out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.x);
        let w = tape.value(self.weight);
        let d = self.dims;
        let n = x.shape()[0];
        let oc = out.shape()[1];
        let (rows, p) = (d.col_rows(), d.col_cols());
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut cols = if d.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * p]
        };
        let mut dcols = vec![0.0; rows * p];
        for i in 0..n {
            let gi = g.slab(i);
            if let Some(gw) = gw.as_mut() {
                let c: &[f64] = if d.is_pointwise() {
                    x.slab(i)
                } else {
                    im2col(x.slab(i), &d, &mut cols);
                    &cols
                };
                gemm(oc, p, rows, gi, Trans::No, c, Trans::Yes, gw.data_mut(), true);
            }
            if let Some(gx) = gx.as_mut() {
                if d.is_pointwise() {
                    gemm(rows, oc, p, w.data(), Trans::Yes, gi, Trans::No, gx.slab_mut(i), false);
                } else {
                    gemm(rows, oc, p, w.data(), Trans::Yes, gi, Trans::No, &mut dcols, false);
                    col2im(&dcols, &d, gx.slab_mut(i));
                }
            }
        }
        let mut grads = vec![gx, gw];
        if self.bias.is_some() {
            grads.push(needs[2].then(|| {
                let mut gb = Tensor::zeros(&[oc]);
                for i in 0..n {
                    for (o, slot) in gb.data_mut().iter_mut().enumerate() {
                        *slot += g.slab(i)[o * p..(o + 1) * p].iter().sum::<f64>();
                    }
                }
                gb
            }));
        }
        grads
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x` is `(N, C, H, W)`, `weight` is `(OC, C, KH, KW)` and `bias`, when
/// present, is `(OC)`.
pub fn conv2d(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>, geom: Conv2dGeometry) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (oc, wc, kh, kw) = tape.value(weight).dims4()?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            alloc::format!("input has {} channels, weight expects {}", c, wc),
        ));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [oc] {
            return Err(Error::shape("conv2d", "bias length must equal output channels"));
        }
    }
    if geom.stride == 0 || h + 2 * geom.padding < kh || w + 2 * geom.padding < kw {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    let dims = Dims {
        c,
        h,
        w,
        kh,
        kw,
        oh: (h + 2 * geom.padding - kh) / geom.stride + 1,
        ow: (w + 2 * geom.padding - kw) / geom.stride + 1,
        stride: geom.stride,
        pad: geom.padding,
    };
    let (rows, p) = (dims.col_rows(), dims.col_cols());
    let mut out = Tensor::zeros(&[n, oc, dims.oh, dims.ow]);
    let mut cols = if dims.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * p]
    };
    {
        let xv = tape.value(x);
        let wv = tape.value(weight);
        for i in 0..n {
            let c: &[f64] = if dims.is_pointwise() {
                xv.slab(i)
            } else {
                im2col(xv.slab(i), &dims, &mut cols);
                &cols
            };
            gemm(oc, rows, p, wv.data(), Trans::No, c, Trans::No, out.slab_mut(i), false);
        }
        if let Some(b) = bias {
            let bv = tape.value(b).data();
            for i in 0..n {
                let slab = out.slab_mut(i);
                for (o, &bo) in bv.iter().enumerate() {
                    slab[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bo);
                }
            }
        }
    }
    Ok(tape.push(out, Conv2d { x, weight, bias, dims }))
}
