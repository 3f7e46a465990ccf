//! Central finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::nn::{Ctx, Mode, ParamStore};
use crate::tensor::Tensor;

/// Outcome of [`check_gradients`] for one input.
#[derive(Debug, Clone, Copy)]
pub struct InputReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked
    /// coordinates.
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates whose step straddles a kink (ReLU, max, bilinear cell
    /// edge) and were compared against the matching one-sided difference.
    pub kinks: usize,
    /// Both gradients are below [`ZERO_GRAD_NOISE`] RMS, so the ratio is
    /// rounding noise over rounding noise; `rel_err` is then reported as 0.
    pub structural_zero: bool,
}

/// One-sided slopes differing by more than this fraction of their
/// magnitude (plus [`KINK_ABS`]) may mark a kink. Smooth curvature also
/// opens a gap, but there the analytic value sits at the midpoint.
pub const KINK_REL: f64 = 1e-4;
pub const KINK_ABS: f64 = 1e-6;

/// RMS below which a gradient counts as vanishing, e.g. for a bias feeding
/// a batch norm. Real gradients in the checked layers are many orders of
/// magnitude larger.
pub const ZERO_GRAD_NOISE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `eps`.
///
/// At most `max_coords` coordinates per input are perturbed, evenly strided
/// across the tensor.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, max_coords: usize, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        reports.push(compare(&analytic, &inputs[idx], eps, max_coords, |coord, value| {
            work[idx].data_mut()[coord] = value;
            eval(&work)
        })?);
    }
    Ok(GradReport { inputs: reports })
}

fn compare<P>(analytic: &Tensor, original: &Tensor, eps: f64, max_coords: usize, mut probe: P) -> Result<InputReport>
where
    P: FnMut(usize, f64) -> Result<f64>,
{
    let len = original.len();
    let step = (len / max_coords.max(1)).max(1);
    let (mut diff2, mut a2, mut n2, mut checked, mut kinks) = (0.0, 0.0, 0.0, 0, 0);
    let mut center = None;
    for coord in (0..len).step_by(step) {
        let orig = original.data()[coord];
        let f0 = match center {
            Some(f) => f,
            None => *center.insert(probe(coord, orig)?),
        };
        let plus = probe(coord, orig + eps)?;
        let minus = probe(coord, orig - eps)?;
        probe(coord, orig)?;
        let (fwd, bwd) = ((plus - f0) / eps, (f0 - minus) / eps);
        let a = analytic.data()[coord];
        let mut numeric = (plus - minus) / (2.0 * eps);
        // At a kink the derivative is one of the one-sided slopes, and the
        // central difference is their meaningless average.
        if libm::fabs(fwd - bwd) > KINK_REL * (libm::fabs(fwd) + libm::fabs(bwd)) + KINK_ABS {
            let side = if libm::fabs(a - fwd) <= libm::fabs(a - bwd) {
                fwd
            } else {
                bwd
            };
            if libm::fabs(a - side) < libm::fabs(a - numeric) {
                numeric = side;
                kinks += 1;
            }
        }
        diff2 += (a - numeric) * (a - numeric);
        a2 += a * a;
        n2 += numeric * numeric;
        checked += 1;
    }
    let rms = |s2: f64| libm::sqrt(s2 / checked.max(1) as f64);
    let structural_zero = checked > 0 && rms(a2) <= ZERO_GRAD_NOISE && rms(n2) <= ZERO_GRAD_NOISE;
    let scale = libm::sqrt(a2).max(libm::sqrt(n2));
    let rel_err = if scale == 0.0 || structural_zero {
        0.0
    } else {
        libm::sqrt(diff2) / scale
    };
    Ok(InputReport {
        rel_err,
        checked,
        kinks,
        structural_zero,
    })
}

/// Per-tensor results of [`check_module_gradients`]: inputs are named
/// `input<i>`, parameters by their store name.
#[derive(Debug, Clone)]
pub struct ModuleReport {
    pub entries: Vec<(String, InputReport)>,
}

impl ModuleReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|(_, r)| r.rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|(_, r)| r.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.entries.iter().map(|(_, r)| r.kinks).sum()
    }

    pub fn worst(&self) -> Option<&(String, InputReport)> {
        self.entries.iter().max_by(|a, b| a.1.rel_err.total_cmp(&b.1.rel_err))
    }
}

/// Like [`check_gradients`] for a layer that binds weights through a
/// [`Ctx`] in training mode: both the inputs and every parameter that
/// receives a gradient are perturbed.
pub fn check_module_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    eps: f64,
    max_coords: usize,
    f: F,
) -> Result<ModuleReport>
where
    F: Fn(&mut Ctx<'_>, &[Var]) -> Result<Var>,
{
    let eval = |s: &ParamStore, values: &[Tensor]| -> Result<f64> {
        let mut ctx = Ctx::new(s, Mode::Train);
        let vars: Vec<Var> = values.iter().map(|t| ctx.tape.constant(t.clone())).collect();
        let out = f(&mut ctx, &vars)?;
        Ok(ctx.value(out).item())
    };

    let mut ctx = Ctx::new(store, Mode::Train);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.leaf(t.clone())).collect();
    let out = f(&mut ctx, &vars)?;
    let input_grads = ctx.tape.backward(out);
    let param_grads = ctx.param_grads(out);
    drop(ctx);

    let mut entries = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        let analytic = input_grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let report = compare(&analytic, &inputs[idx], eps, max_coords, |coord, value| {
            work[idx].data_mut()[coord] = value;
            eval(store, &work)
        })?;
        entries.push((alloc::format!("input{idx}"), report));
    }
    let mut perturbed = store.clone();
    for (name, analytic) in &param_grads {
        let original = store.param(name).expect("bound parameters come from the store").clone();
        let report = compare(analytic, &original, eps, max_coords, |coord, value| {
            perturbed.param_mut(name).expect("present").data_mut()[coord] = value;
            eval(&perturbed, inputs)
        })?;
        entries.push((name.clone(), report));
    }
    Ok(ModuleReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    /// `Σ relu(v + shift)`; with `doubled` the backward pass is twice the
    /// true gradient while the value is unchanged.
    fn relu_readout(shift: f64, doubled: bool) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
        move |tape, v| {
            let c = tape.constant(Tensor::new(&[1], alloc::vec![shift]).unwrap());
            let s = ops::add(tape, v[0], c)?;
            let r = ops::relu(tape, s);
            if !doubled {
                return Ok(ops::sum(tape, r));
            }
            let twice = ops::scale(tape, r, 2.0);
            let frozen = tape.constant(tape.value(r).map(|x| -x));
            let out = ops::add(tape, twice, frozen)?;
            Ok(ops::sum(tape, out))
        }
    }

    fn at_zero() -> [Tensor; 1] {
        [Tensor::new(&[1], alloc::vec![0.0]).unwrap()]
    }

    #[test]
    fn kink_is_compared_one_sided() {
        // The kink sits 0.3·eps left of the point, so the central
        // difference averages slopes 1 and 0.3.
        let r = check_gradients(&at_zero(), 1e-5, 1, relu_readout(0.3e-5, false)).unwrap();
        assert_eq!(r.inputs[0].kinks, 1);
        assert!(r.max_rel_err() < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_at_kink_is_still_caught() {
        let r = check_gradients(&at_zero(), 1e-5, 1, relu_readout(0.3e-5, true)).unwrap();
        assert!(r.max_rel_err() > 0.1, "{r:?}");
    }

    #[test]
    fn vanishing_gradient_is_not_noise_over_noise() {
        let f = |tape: &mut Tape, v: &[Var]| {
            let neg = ops::scale(tape, v[0], -1.0);
            let d = ops::add(tape, v[0], neg)?;
            Ok(ops::sum(tape, d))
        };
        let r = check_gradients(&[Tensor::new(&[3], alloc::vec![1.0, 2.0, 3.0]).unwrap()], 1e-5, 3, f).unwrap();
        assert!(r.inputs[0].structural_zero);
        assert_eq!(r.max_rel_err(), 0.0);
    }
}
