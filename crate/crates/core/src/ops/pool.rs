use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct ChannelMax {
    x: Var,
    argmax: Vec<usize>,
}

impl GradFn for ChannelMax {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (n, k, h, w) = tape.value(self.x).dims4().expect("4-D");
        let p = h * w;
        let mut gx = Tensor::zeros(&[n, k, h, w]);
        for b in 0..n {
            for pix in 0..p {
                let ch = self.argmax[b * p + pix];
                gx.data_mut()[(b * k + ch) * p + pix] = g.data()[b * p + pix];
            }
        }
        vec![Some(gx)]
    }
}

/// Elementwise maximum over the channel axis: `(N, K, H, W) -> (N, 1, H, W)`.
/// Ties resolve to the lowest channel.
pub fn channel_max(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, k, h, w) = tape.value(x).dims4()?;
    let p = h * w;
    let xd = tape.value(x).data();
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    let mut argmax = vec![0; n * p];
    for b in 0..n {
        for pix in 0..p {
            let mut best = 0;
            for ch in 1..k {
                if xd[(b * k + ch) * p + pix] > xd[(b * k + best) * p + pix] {
                    best = ch;
                }
            }
            argmax[b * p + pix] = best;
            out.data_mut()[b * p + pix] = xd[(b * k + best) * p + pix];
        }
    }
    Ok(tape.push(out, ChannelMax { x, argmax }))
}

struct WeightedPool {
    features: Var,
    mask: Var,
    denom: Vec<f64>,
}

impl GradFn for WeightedPool {
    fn inputs(&self) -> Vec<Var> {
        vec![self.features, self.mask]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let f = tape.value(self.features);
        let m = tape.value(self.mask);
        let (n, c, h, w) = f.dims4().expect("4-D");
        let p = h * w;
        let gf = needs[0].then(|| {
            let mut gf = Tensor::zeros(f.shape());
            for b in 0..n {
                let mask = &m.data()[b * p..(b + 1) * p];
                for ch in 0..c {
                    let k = g.data()[b * c + ch] / self.denom[b];
                    let dst = &mut gf.data_mut()[(b * c + ch) * p..(b * c + ch + 1) * p];
                    for (d, mv) in dst.iter_mut().zip(mask) {
                        *d = k * mv;
                    }
                }
            }
            gf
        });
        let gm = needs[1].then(|| {
            let mut gm = Tensor::zeros(m.shape());
            for b in 0..n {
                let dst = &mut gm.data_mut()[b * p..(b + 1) * p];
                for ch in 0..c {
                    let gv = g.data()[b * c + ch] / self.denom[b];
                    let o = out.data()[b * c + ch];
                    let plane = &f.data()[(b * c + ch) * p..(b * c + ch + 1) * p];
                    for (d, fv) in dst.iter_mut().zip(plane) {
                        *d += gv * (fv - o);
                    }
                }
            }
            gm
        });
        vec![gf, gm]
    }
}

/// Mask-weighted spatial average, `(N, C, H, W) × (N, 1, H, W) -> (N, C)`:
/// `Σ_p F·m / (Σ_p m + eps)`.
pub fn weighted_pool(tape: &mut Tape, features: Var, mask: Var, eps: f64) -> Result<Var> {
    let (n, c, h, w) = tape.value(features).dims4()?;
    if tape.shape(mask) != [n, 1, h, w] {
        return Err(Error::shape(
            "weighted_pool",
            alloc::format!("mask {:?} for features {:?}", tape.shape(mask), tape.shape(features)),
        ));
    }
    let p = h * w;
    let (f, m) = (tape.value(features), tape.value(mask));
    let mut out = Tensor::zeros(&[n, c]);
    let mut denom = Vec::with_capacity(n);
    for b in 0..n {
        let mask = &m.data()[b * p..(b + 1) * p];
        let s = mask.iter().sum::<f64>() + eps;
        denom.push(s);
        for ch in 0..c {
            let plane = &f.data()[(b * c + ch) * p..(b * c + ch + 1) * p];
            out.data_mut()[b * c + ch] = plane.iter().zip(mask).map(|(a, b)| a * b).sum::<f64>() / s;
        }
    }
    Ok(tape.push(out, WeightedPool { features, mask, denom }))
}
