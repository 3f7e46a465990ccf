use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Trans};
use crate::tensor::Tensor;

struct Linear {
    x: Var,
    weight: Var,
    bias: Option<Var>,
}

impl GradFn for Linear {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.weight];
        v.extend(self.bias);
        v
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.x);
        let w = tape.value(self.weight);
        let (n, din) = x.dims2().expect("2-D");
        let dout = w.shape()[0];
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x.shape());
            gemm(
                n,
                dout,
                din,
                g.data(),
                Trans::No,
                w.data(),
                Trans::No,
                gx.data_mut(),
                false,
            );
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(w.shape());
            gemm(
                dout,
                n,
                din,
                g.data(),
                Trans::Yes,
                x.data(),
                Trans::No,
                gw.data_mut(),
                false,
            );
            gw
        });
        let mut grads = vec![gx, gw];
        if self.bias.is_some() {
            grads.push(needs[2].then(|| {
                let mut gb = Tensor::zeros(&[dout]);
                for i in 0..n {
                    for (slot, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                        *slot += v;
                    }
                }
                gb
            }));
        }
        grads
    }
}

/// `x · Wᵀ + b` for `x: (N, in)`, `W: (out, in)`, `b: (out)`.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let (n, din) = tape.value(x).dims2()?;
    let (dout, win) = tape.value(weight).dims2()?;
    if win != din {
        return Err(Error::shape(
            "linear",
            alloc::format!("input width {} vs weight width {}", din, win),
        ));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [dout] {
            return Err(Error::shape("linear", "bias length"));
        }
    }
    let mut out = Tensor::zeros(&[n, dout]);
    gemm(
        n,
        din,
        dout,
        tape.value(x).data(),
        Trans::No,
        tape.value(weight).data(),
        Trans::Yes,
        out.data_mut(),
        false,
    );
    if let Some(b) = bias {
        let bv = tape.value(b).data().to_vec();
        for i in 0..n {
            for (slot, v) in out.data_mut()[i * dout..(i + 1) * dout].iter_mut().zip(&bv) {
                *slot += v;
            }
        }
    }
    Ok(tape.push(out, Linear { x, weight, bias }))
}

struct BatchMatmul {
    a: Var,
    b: Var,
    ta: Trans,
    tb: Trans,
    dims: (usize, usize, usize, usize),
}

fn flip(t: Trans) -> Trans {
    match t {
        Trans::No => Trans::Yes,
        Trans::Yes => Trans::No,
    }
}

impl GradFn for BatchMatmul {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, m, k, n) = self.dims;
        let a = tape.value(self.a);
        let b = tape.value(self.b);
        let ga = needs[0].then(|| {
            let mut ga = Tensor::zeros(a.shape());
            for i in 0..batch {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let bi = b.slab(i);
                // d op(A) = G · op(B)ᵀ; stored A is op(A) or its transpose.
                match self.ta {
                    Trans::No => gemm(m, n, k, gi, Trans::No, bi, flip(self.tb), ga.slab_mut(i), false),
                    Trans::Yes => gemm(k, n, m, bi, self.tb, gi, Trans::Yes, ga.slab_mut(i), false),
                }
            }
            ga
        });
        let gb = needs[1].then(|| {
            let mut gb = Tensor::zeros(b.shape());
            for i in 0..batch {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let ai = a.slab(i);
                // d op(B) = op(A)ᵀ · G
                match self.tb {
                    Trans::No => gemm(k, m, n, ai, flip(self.ta), gi, Trans::No, gb.slab_mut(i), false),
                    Trans::Yes => gemm(n, m, k, gi, Trans::Yes, ai, self.ta, gb.slab_mut(i), false),
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

/// Batched `op(a) · op(b)` over the leading axis of two 3-D tensors.
pub fn batch_matmul(tape: &mut Tape, a: Var, ta: Trans, b: Var, tb: Trans) -> Result<Var> {
    let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
        return Err(Error::shape("batch_matmul", alloc::format!("{:?} x {:?}", sa, sb)));
    }
    let (m, k) = match ta {
        Trans::No => (sa[1], sa[2]),
        Trans::Yes => (sa[2], sa[1]),
    };
    let (kb, n) = match tb {
        Trans::No => (sb[1], sb[2]),
        Trans::Yes => (sb[2], sb[1]),
    };
    if k != kb {
        return Err(Error::shape(
            "batch_matmul",
            alloc::format!("inner dimensions {} vs {}", k, kb),
        ));
    }
    let batch = sa[0];
    let mut out = Tensor::zeros(&[batch, m, n]);
    {
        let (av, bv) = (tape.value(a), tape.value(b));
        for i in 0..batch {
            gemm(m, k, n, av.slab(i), ta, bv.slab(i), tb, out.slab_mut(i), false);
        }
    }
    Ok(tape.push(
        out,
        BatchMatmul {
            a,
            b,
            ta,
            tb,
            dims: (batch, m, k, n),
        },
    ))
}

struct Softmax(Var);

impl GradFn for Softmax {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, _: &Tape, out: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let cols = *out.shape().last().expect("non-scalar");
        let mut gi = Tensor::zeros(out.shape());
        for ((o, gr), dst) in out
            .data()
            .chunks(cols)
            .zip(g.data().chunks(cols))
            .zip(gi.data_mut().chunks_mut(cols))
        {
            let dotp: f64 = o.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((d, &y), &gy) in dst.iter_mut().zip(o).zip(gr) {
                *d = y * (gy - dotp);
            }
        }
        vec![Some(gi)]
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Softmax over the last axis.
pub fn softmax_last(tape: &mut Tape, x: Var) -> Result<Var> {
    let mut out = tape.value(x).clone();
    let cols = *out
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
    out.data_mut().chunks_mut(cols).for_each(softmax_in_place);
    Ok(tape.push(out, Softmax(x)))
}
