use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            op,
            alloc::format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

struct Add(Var, Var);

impl GradFn for Add {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0, self.1]
    }
    fn backward(&self, _: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "add", a, b)?;
    let mut out = tape.value(a).clone();
    out.add_assign(tape.value(b));
    Ok(tape.push(out, Add(a, b)))
}

struct Mul(Var, Var);

impl GradFn for Mul {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0, self.1]
    }
    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let a = tape.value(self.0);
        let b = tape.value(self.1);
        let ga = needs[0].then(|| Tensor::from_fn(g.shape(), |i| g.data()[i] * b.data()[i]));
        let gb = needs[1].then(|| Tensor::from_fn(g.shape(), |i| g.data()[i] * a.data()[i]));
        vec![ga, gb]
    }
}

/// Elementwise product of equal-shaped tensors.
pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "mul", a, b)?;
    let (x, y) = (tape.value(a), tape.value(b));
    let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * y.data()[i]);
    Ok(tape.push(out, Mul(a, b)))
}

struct Scale(Var, f64);

impl GradFn for Scale {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, _: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.map(|v| v * self.1))]
    }
}

pub fn scale(tape: &mut Tape, a: Var, factor: f64) -> Var {
    let out = tape.value(a).map(|v| v * factor);
    tape.push(out, Scale(a, factor))
}

struct SumAll(Var);

impl GradFn for SumAll {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(tape.shape(self.0), g.item()))]
    }
}

/// Sum of every element, as a scalar.
pub fn sum(tape: &mut Tape, a: Var) -> Var {
    let s = tape.value(a).sum();
    tape.push(Tensor::scalar(s), SumAll(a))
}

struct Relu(Var);

impl GradFn for Relu {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.0);
        vec![Some(Tensor::from_fn(g.shape(), |i| {
            if x.data()[i] > 0.0 {
                g.data()[i]
            } else {
                0.0
            }
        }))]
    }
}

pub fn relu(tape: &mut Tape, a: Var) -> Var {
    let out = tape.value(a).map(|v| v.max(0.0));
    tape.push(out, Relu(a))
}

struct Sigmoid(Var);

impl GradFn for Sigmoid {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, _: &Tape, out: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::from_fn(g.shape(), |i| {
            let s = out.data()[i];
            g.data()[i] * s * (1.0 - s)
        }))]
    }
}

pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(tape: &mut Tape, a: Var) -> Var {
    let out = tape.value(a).map(sigmoid_value);
    tape.push(out, Sigmoid(a))
}

struct Reshape(Var);

impl GradFn for Reshape {
    fn inputs(&self) -> Vec<Var> {
        vec![self.0]
    }
    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshape(tape.shape(self.0)).expect("reshape back"))]
    }
}

pub fn reshape(tape: &mut Tape, a: Var, shape: &[usize]) -> Result<Var> {
    let out = tape.value(a).clone().reshape(shape)?;
    Ok(tape.push(out, Reshape(a)))
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Concat {
    parts: Vec<Var>,
    axis: usize,
}

impl GradFn for Concat {
    fn inputs(&self) -> Vec<Var> {
        self.parts.clone()
    }
    fn backward(&self, tape: &Tape, out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_axis(out.shape(), self.axis);
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.parts.len());
        for (p, need) in self.parts.iter().zip(needs) {
            let shape = tape.shape(*p);
            let len = shape[self.axis];
            if *need {
                let mut gp = Tensor::zeros(shape);
                let dst = gp.data_mut();
                for o in 0..outer {
                    let src = &g.data()[(o * total + offset) * inner..(o * total + offset + len) * inner];
                    dst[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
                }
                grads.push(Some(gp));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        grads
    }
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat(tape: &mut Tape, parts: &[Var], axis: usize) -> Result<Var> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    let base = tape.shape(*first).to_vec();
    if axis >= base.len() {
        return Err(Error::shape("concat", "axis out of range"));
    }
    let mut total = 0;
    for p in parts {
        let s = tape.shape(*p);
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
            return Err(Error::shape(
                "concat",
                alloc::format!("{:?} vs {:?} along axis {}", s, base, axis),
            ));
        }
        total += s[axis];
    }
    let mut shape = base.clone();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let t = tape.value(*p);
            let len = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
        }
    }
    let out = Tensor::new(&shape, data)?;
    Ok(tape.push(
        out,
        Concat {
            parts: parts.to_vec(),
            axis,
        },
    ))
}

struct Narrow {
    input: Var,
    axis: usize,
    start: usize,
}

impl GradFn for Narrow {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, tape: &Tape, out: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.input);
        let (outer, total, inner) = split_axis(shape, self.axis);
        let len = out.shape()[self.axis];
        let mut gi = Tensor::zeros(shape);
        let dst = gi.data_mut();
        for o in 0..outer {
            let at = (o * total + self.start) * inner;
            dst[at..at + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(gi)]
    }
}

/// The sub-range `start..start + len` of `axis`.
pub fn narrow(tape: &mut Tape, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if axis >= shape.len() || start + len > shape[axis] || len == 0 {
        return Err(Error::shape(
            "narrow",
            alloc::format!("{}..{} of axis {} in {:?}", start, start + len, axis, shape),
        ));
    }
    let (outer, total, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    let src = tape.value(a).data();
    for o in 0..outer {
        let at = (o * total + start) * inner;
        data.extend_from_slice(&src[at..at + len * inner]);
    }
    let mut out_shape = shape;
    out_shape[axis] = len;
    let out = Tensor::new(&out_shape, data)?;
    Ok(tape.push(out, Narrow { input: a, axis, start }))
}
