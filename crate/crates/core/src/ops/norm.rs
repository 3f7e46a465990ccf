use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics observed in a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the form accumulated into running estimates.
    pub var: Vec<f64>,
}

struct BatchNorm {
    x: Var,
    gamma: Var,
    beta: Var,
    normalized: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl GradFn for BatchNorm {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = g.dims4().expect("4-D");
        let hw = h * w;
        let m = (n * hw) as f64;
        let gamma = tape.value(self.gamma).data();
        let xh = self.normalized.data();
        let gd = g.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for j in base..base + hw {
                    sum_g[ch] += gd[j];
                    sum_gx[ch] += gd[j] * xh[j];
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(g.shape());
            let out = gx.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let k = gamma[ch] * self.inv_std[ch];
                    for j in base..base + hw {
                        out[j] = if self.batch_stats {
                            k * (gd[j] - sum_g[ch] / m - xh[j] * sum_gx[ch] / m)
                        } else {
                            k * gd[j]
                        };
                    }
                }
            }
            gx
        });
        vec![
            gx,
            needs[1].then(|| Tensor::new(&[c], sum_gx.clone()).expect("len c")),
            needs[2].then(|| Tensor::new(&[c], sum_g.clone()).expect("len c")),
        ]
    }
}

fn check(tape: &Tape, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize, usize)> {
    let dims = tape.value(x).dims4()?;
    if tape.shape(gamma) != [dims.1] || tape.shape(beta) != [dims.1] {
        return Err(Error::shape(
            "batch_norm",
            "affine parameters must have one entry per channel",
        ));
    }
    Ok(dims)
}

fn normalize(x: &Tensor, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4().expect("4-D");
    let hw = h * w;
    let mut xh = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                let v = (x.data()[j] - mean[ch]) * inv_std[ch];
                xh.data_mut()[j] = v;
                y.data_mut()[j] = gamma[ch] * v + beta[ch];
            }
        }
    }
    (xh, y)
}

/// Batch normalization using the statistics of `x` itself (training mode).
pub fn batch_norm_train(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
    let (n, c, h, w) = check(tape, x, gamma, beta)?;
    let hw = h * w;
    let m = n * hw;
    let xv = tape.value(x);
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        for (ch, slot) in mean.iter_mut().enumerate() {
            let base = (i * c + ch) * hw;
            *slot += xv.data()[base..base + hw].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            var[ch] += xv.data()[base..base + hw]
                .iter()
                .map(|v| (v - mean[ch]) * (v - mean[ch]))
                .sum::<f64>();
        }
    }
    let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
    let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let (normalized, y) = normalize(xv, &mean, &inv_std, tape.value(gamma).data(), tape.value(beta).data());
    let unbiased = var
        .iter()
        .map(|v| if m > 1 { v / (m - 1) as f64 } else { 0.0 })
        .collect();
    let out = tape.push(
        y,
        BatchNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
            batch_stats: true,
        },
    );
    Ok((out, BatchStats { mean, var: unbiased }))
}

/// Batch normalization with fixed running statistics (inference mode).
pub fn batch_norm_eval(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Var> {
    let (_, c, _, _) = check(tape, x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batch_norm", "running statistics length"));
    }
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let (normalized, y) = normalize(
        tape.value(x),
        running_mean,
        &inv_std,
        tape.value(gamma).data(),
        tape.value(beta).data(),
    );
    Ok(tape.push(
        y,
        BatchNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
            batch_stats: false,
        },
    ))
}
