//! Contract examples of the pyramid, mask generator, embedding heads and
//! losses.

use finetrack_core::autograd::{Tape, Var};
use finetrack_core::neural_blocks::{bilinear_upsample, warp, Aggregation, Fafpn, FafpnConfig, FlowAlign, ResBlock};
use finetrack_core::nn::{Ctx, Mode, ParamStore};
use finetrack_core::objectives::{
    classification_losses, cross_entropy, diversity_loss, soft_margin_triplet, total_loss, triplet_losses, Classifiers,
    LossWeights,
};
use finetrack_core::ops::{self, Roi};
use finetrack_core::representation::{weighted_pool, EmbeddingHead, Mpmg, Pmg, POOL_EPS};
use finetrack_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn t2(rows: &[&[f64]]) -> Tensor {
    let (h, w) = (rows.len(), rows[0].len());
    Tensor::new(&[1, 1, h, w], rows.concat()).unwrap()
}

// ---- res_block -------------------------------------------------------------

#[test]
fn res_block_shape_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = ResBlock::new("rb", 64, 128);
    let mut store = ParamStore::new();
    block.init(&mut store, &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        let mut ctx = Ctx::new(&store, mode);
        let x = ctx.input(randn(&mut rng, &[2, 64, 16, 8]));
        let y = block.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).shape(), &[2, 128, 16, 8]);
        let z = ctx.input(Tensor::zeros(&[2, 64, 16, 8]));
        let y = block.forward(&mut ctx, z).unwrap();
        assert!(ctx.value(y).data().iter().all(|&v| v == 0.0));
    }
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let bad = ctx.input(Tensor::zeros(&[1, 32, 4, 4]));
    assert!(block.forward(&mut ctx, bad).is_err());
}

// ---- bilinear_upsample / warp ---------------------------------------------------

fn upsample(x: Tensor, hw: (usize, usize)) -> finetrack_core::Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = bilinear_upsample(&mut tape, v, hw)?;
    Ok(tape.value(y).clone())
}

#[test]
fn upsample_constants_and_hand_case() {
    let y = upsample(Tensor::full(&[1, 1, 2, 2], 3.0), (4, 4)).unwrap();
    assert!(y.data().iter().all(|&v| v == 3.0));
    let y = upsample(Tensor::full(&[1, 2, 1, 1], -1.5), (3, 5)).unwrap();
    assert!(y.data().iter().all(|&v| v == -1.5));

    // Output pixel i samples source coordinate (i + 0.5)/2 − 0.5, clamped
    // at the border: rows/cols map to 0, 0.25, 0.75, 1.
    let y = upsample(t2(&[&[1.0, 2.0], &[3.0, 4.0]]), (4, 4)).unwrap();
    let pos = [0.0, 0.25, 0.75, 1.0];
    for (i, py) in pos.iter().enumerate() {
        for (j, px) in pos.iter().enumerate() {
            let want = 1.0 + px + 2.0 * py;
            assert!((y.data()[i * 4 + j] - want).abs() <= 1e-6);
        }
    }
    assert!(upsample(Tensor::zeros(&[1, 1, 4, 4]), (2, 8)).is_err());
}

#[test]
fn upsample_stays_within_input_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&mut rng, &[1, 1, 3, 5]);
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let y = upsample(x, (7, 11)).unwrap();
    assert!(y.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
}

fn warp_with(x: Tensor, dx: f64, dy: f64) -> Tensor {
    let (_, _, h, w) = x.dims4().unwrap();
    let mut flow = Tensor::zeros(&[1, 2, h, w]);
    let p = h * w;
    flow.data_mut()[..p].fill(dx);
    flow.data_mut()[p..].fill(dy);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let fv = tape.constant(flow);
    let y = warp(&mut tape, xv, fv).unwrap();
    tape.value(y).clone()
}

#[test]
fn warp_examples() {
    let x = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(warp_with(x.clone(), 1.0, 0.0).data(), &[2.0, 0.0, 4.0, 0.0]);
    assert!(warp_with(x.clone(), 0.0, 0.0).max_abs_diff(&x) <= 1e-6);
    assert!(warp_with(x.clone(), 5.0, -7.0).data().iter().all(|&v| v == 0.0));
    // Half a pixel to the right blends neighbours; the right column blends
    // with the zero padding.
    assert_eq!(warp_with(x, 0.5, 0.0).data(), &[1.5, 1.0, 3.5, 2.0]);
}

// ---- flow_align / fafpn -----------------------------------------------------

fn randomize(store: &mut ParamStore, names: &[&str], rng: &mut ChaCha8Rng) {
    for name in names {
        let t = store.param_mut(name).unwrap();
        for v in t.data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
}

#[test]
fn zero_initialized_flow_align_is_upsample_and_add() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fam = FlowAlign::new("fam", 128, 3);
    let mut store = ParamStore::new();
    fam.init(&mut store, &mut rng);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let low = ctx.input(randn(&mut rng, &[1, 128, 8, 4]));
    let high = ctx.input(randn(&mut rng, &[1, 128, 16, 8]));
    let out = fam.forward(&mut ctx, low, high).unwrap();
    assert_eq!(ctx.value(out).shape(), &[1, 128, 16, 8]);
    let up = bilinear_upsample(&mut ctx.tape, low, (16, 8)).unwrap();
    let plain = ops::add(&mut ctx.tape, high, up).unwrap();
    assert_eq!(ctx.value(out), ctx.value(plain));

    let other = ctx.input(Tensor::zeros(&[1, 64, 16, 8]));
    assert!(fam.forward(&mut ctx, low, other).is_err());
}

#[test]
fn flow_align_is_batch_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fam = FlowAlign::new("fam", 3, 3);
    let mut store = ParamStore::new();
    fam.init(&mut store, &mut rng);
    randomize(&mut store, &["fam.flow.weight", "fam.flow.bias"], &mut rng);
    let low = randn(&mut rng, &[3, 3, 2, 3]);
    let high = randn(&mut rng, &[3, 3, 4, 6]);
    let perm = [2, 0, 1];
    let permute = |t: &Tensor| {
        let slab = t.len() / 3;
        let data: Vec<f64> = perm.iter().flat_map(|&i| t.slab(i)[..slab].to_vec()).collect();
        Tensor::new(t.shape(), data).unwrap()
    };
    let run = |low: Tensor, high: Tensor| {
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let l = ctx.input(low);
        let h = ctx.input(high);
        let y = fam.forward(&mut ctx, l, h).unwrap();
        ctx.value(y).clone()
    };
    let base = run(low.clone(), high.clone());
    let moved = run(permute(&low), permute(&high));
    assert!(permute(&base).max_abs_diff(&moved) <= 1e-12);
}

fn fafpn(aggregation: Aggregation, cu: usize, parts: usize) -> Fafpn {
    Fafpn::new(
        "fafpn",
        FafpnConfig {
            scale_channels: vec![256, 128, 64],
            unified_channels: cu,
            parts,
            flow_kernel: 3,
            aggregation,
        },
    )
    .unwrap()
}

#[test]
fn fafpn_shapes_and_config_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = fafpn(Aggregation::Aligned, 128, 4);
    let mut store = ParamStore::new();
    net.init(&mut store, &mut rng);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let maps: Vec<Var> = [(256, 4, 2), (128, 8, 4), (64, 16, 8)]
        .iter()
        .map(|&(c, h, w)| ctx.input(randn(&mut rng, &[2, c, h, w])))
        .collect();
    let out = net.forward(&mut ctx, &maps).unwrap();
    assert_eq!(ctx.value(out.mask).shape(), &[2, 128, 16, 8]);
    assert_eq!(ctx.value(out.reid).shape(), &[2, 128, 16, 8]);
    assert_eq!(out.flows.len(), 2);
    assert!(net.forward(&mut ctx, &maps[1..]).is_err());

    let single = FafpnConfig {
        scale_channels: vec![64],
        ..FafpnConfig::default()
    };
    assert!(Fafpn::new("f", single).is_err());
    let indivisible = FafpnConfig {
        unified_channels: 128,
        parts: 6,
        ..FafpnConfig::default()
    };
    assert!(Fafpn::new("f", indivisible).is_err());
}

#[test]
fn zero_initialized_fafpn_equals_summing_pyramid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let aligned = fafpn(Aggregation::Aligned, 12, 6);
    let summed = fafpn(Aggregation::Sum, 12, 6);
    let mut store = ParamStore::new();
    aligned.init(&mut store, &mut rng);
    let inputs: Vec<Tensor> = [(256, 4, 2), (128, 8, 4), (64, 16, 8)]
        .iter()
        .map(|&(c, h, w)| randn(&mut rng, &[3, c, h, w]))
        .collect();
    let run = |net: &Fafpn| {
        let mut ctx = Ctx::new(&store, Mode::Train);
        let maps: Vec<Var> = inputs.iter().map(|t| ctx.input(t.clone())).collect();
        let out = net.forward(&mut ctx, &maps).unwrap();
        (ctx.value(out.mask).clone(), ctx.value(out.reid).clone())
    };
    assert_eq!(run(&aligned), run(&summed));
}

// ---- pmg / mpmg ---------------------------------------------------------------

#[test]
fn pmg_shape_and_zero_mask_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pmg = Pmg::new("pmg", 32);
    let mut store = ParamStore::new();
    pmg.init(&mut store, &mut rng);
    let x = randn(&mut rng, &[1, 32, 16, 8]);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let v = ctx.input(x.clone());
    let m = pmg.forward(&mut ctx, v).unwrap();
    assert_eq!(ctx.value(m).shape(), &[1, 1, 16, 8]);
    assert!(ctx.value(m).data().iter().all(|&p| p > 0.0 && p < 1.0));
    for name in ["pmg.mask.weight", "pmg.mask.bias"] {
        store.param_mut(name).unwrap().data_mut().fill(0.0);
    }
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let v = ctx.input(x);
    let m = pmg.forward(&mut ctx, v).unwrap();
    assert!(ctx.value(m).data().iter().all(|&p| p == 0.5));
    let wrong = ctx.input(Tensor::zeros(&[1, 16, 4, 4]));
    assert!(pmg.forward(&mut ctx, wrong).is_err());
}

fn mpmg_masks(mpmg: &Mpmg, store: &ParamStore, x: &Tensor) -> (Tensor, Tensor) {
    let mut ctx = Ctx::new(store, Mode::Eval);
    let v = ctx.input(x.clone());
    let m = mpmg.forward(&mut ctx, v).unwrap();
    (ctx.value(m.part).clone(), ctx.value(m.global).clone())
}

#[test]
fn mpmg_global_is_max_and_branches_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (k, block) = (6, 4);
    let mpmg = Mpmg::new("mpmg", k * block, k).unwrap();
    let mut store = ParamStore::new();
    mpmg.init(&mut store, &mut rng);
    let x = randn(&mut rng, &[2, k * block, 6, 3]);
    let (part, global) = mpmg_masks(&mpmg, &store, &x);
    let p = 18;
    for n in 0..2 {
        for pix in 0..p {
            let vals: Vec<f64> = (0..k).map(|c| part.data()[(n * k + c) * p + pix]).collect();
            assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0));
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(global.data()[n * p + pix], max);
        }
    }

    // Perturbing branch 2 changes mask 2 only.
    let mut other = store.clone();
    other.param_mut("mpmg.pmg2.value.weight").unwrap().data_mut()[0] += 0.5;
    let (part2, _) = mpmg_masks(&mpmg, &other, &x);
    for n in 0..2 {
        for c in 0..k {
            let a = &part.data()[(n * k + c) * p..(n * k + c + 1) * p];
            let b = &part2.data()[(n * k + c) * p..(n * k + c + 1) * p];
            assert_eq!(a == b, c != 2, "branch {c}");
        }
    }

    // Zeroing input block 4 leaves the other masks bit-identical.
    let mut x0 = x.clone();
    for n in 0..2 {
        for ch in 4 * block..5 * block {
            x0.data_mut()[(n * k * block + ch) * p..(n * k * block + ch + 1) * p].fill(0.0);
        }
    }
    let (part0, _) = mpmg_masks(&mpmg, &store, &x0);
    for n in 0..2 {
        for c in (0..k).filter(|&c| c != 4) {
            assert_eq!(
                &part.data()[(n * k + c) * p..(n * k + c + 1) * p],
                &part0.data()[(n * k + c) * p..(n * k + c + 1) * p]
            );
        }
    }

    // All final convs zeroed: every mask is 0.5.
    for i in 0..k {
        for s in ["weight", "bias"] {
            store
                .param_mut(&format!("mpmg.pmg{i}.mask.{s}"))
                .unwrap()
                .data_mut()
                .fill(0.0);
        }
    }
    let (part, global) = mpmg_masks(&mpmg, &store, &x);
    assert!(part.data().iter().chain(global.data()).all(|&v| v == 0.5));
    assert!(Mpmg::new("m", 20, 6).is_err());
}

#[test]
fn channel_max_hand_case() {
    let mut tape = Tape::new();
    let parts = tape.constant(Tensor::new(&[1, 6, 1, 1], vec![0.2, 0.7, 0.5, 0.5, 0.5, 0.5]).unwrap());
    let g = ops::channel_max(&mut tape, parts).unwrap();
    assert_eq!(tape.value(g).data(), &[0.7]);
}

// ---- weighted_pool / embedding heads ----------------------------------------

fn pool(f: Tensor, m: Tensor) -> Vec<f64> {
    let store = ParamStore::new();
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let fv = ctx.input(f);
    let mv = ctx.input(m);
    let y = weighted_pool(&mut ctx, fv, mv).unwrap();
    ctx.value(y).data().to_vec()
}

#[test]
fn weighted_pool_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = randn(&mut rng, &[1, 3, 2, 2]);
    let mean: Vec<f64> = (0..3)
        .map(|c| f.data()[c * 4..c * 4 + 4].iter().sum::<f64>() / 4.0)
        .collect();
    let got = pool(f.clone(), Tensor::ones(&[1, 1, 2, 2]));
    for (g, m) in got.iter().zip(&mean) {
        // The guard perturbs the mean by a relative 1e-6 / 4.
        assert!((g - m).abs() <= 1e-6 * m.abs().max(1.0));
    }
    assert!(pool(f, Tensor::zeros(&[1, 1, 2, 2])).iter().all(|&v| v == 0.0));
    let two = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
    let m = Tensor::new(&[1, 1, 1, 2], vec![0.25, 0.75]).unwrap();
    assert_eq!(pool(two, m), vec![2.5 / (1.0 + POOL_EPS)]);
}

#[test]
fn embedding_head_shapes_and_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (cu, k) = (192, 6);
    let mpmg = Mpmg::new("mpmg", cu, k).unwrap();
    let head = EmbeddingHead::new("embed", cu, 128, 256);
    let mut store = ParamStore::new();
    mpmg.init(&mut store, &mut rng);
    head.init(&mut store, &mut rng);
    let one = randn(&mut rng, &[1, cu, 4, 2]);
    let other = randn(&mut rng, &[1, cu, 4, 2]);
    // Batch: [one, other, one]
    let batch = Tensor::new(&[3, cu, 4, 2], [one.data(), other.data(), one.data()].concat()).unwrap();
    let swapped = Tensor::new(&[3, cu, 4, 2], [other.data(), one.data(), one.data()].concat()).unwrap();
    let run = |x: &Tensor| {
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let v = ctx.input(x.clone());
        let masks = mpmg.forward(&mut ctx, v).unwrap();
        let e = head.forward(&mut ctx, v, masks).unwrap();
        (ctx.value(e.global).clone(), ctx.value(e.parts).clone())
    };
    let (g, p) = run(&batch);
    assert_eq!(g.shape(), &[3, 256]);
    assert_eq!(p.shape(), &[3, 6, 128]);
    assert_eq!(g.row(0), g.row(2));
    assert_eq!(p.slab(0), p.slab(2));
    let (g2, p2) = run(&swapped);
    assert_eq!(g.row(0), g2.row(1));
    assert_eq!(g.row(1), g2.row(0));
    assert_eq!(p.slab(1), p2.slab(0));
}

// ---- losses -----------------------------------------------------------------------

fn triplet(points: &[[f64; 2]], labels: &[usize]) -> (f64, bool) {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(&[points.len(), 2], points.concat()).unwrap());
    let t = soft_margin_triplet(&mut tape, v, labels).unwrap();
    (tape.value(t.loss).item(), t.degenerate())
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

#[test]
fn triplet_examples() {
    // Unit square: every anchor's hardest positive and negative are both at
    // distance 1.
    let (l, _) = triplet(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], &[0, 0, 1, 1]);
    assert!((l - 2f64.ln()).abs() < 1e-12);
    let (l, _) = triplet(&[[0.0, 0.0], [0.0, 1.0], [1e3, 0.0], [1e3, 1.0]], &[0, 0, 1, 1]);
    assert!((0.0..1e-12).contains(&l));
    let (l, _) = triplet(&[[0.0, 0.0], [0.0, 2.0], [3.0, 0.0], [3.0, 4.0]], &[0, 0, 1, 1]);
    let r13 = 13f64.sqrt();
    let want = (softplus(-1.0) + softplus(2.0 - r13) + softplus(1.0) + softplus(4.0 - r13)) / 4.0;
    assert!((l - want).abs() <= 1e-9);
    let (l, degenerate) = triplet(&[[0.0, 0.0], [1.0, 1.0]], &[3, 3]);
    assert!(degenerate && l == 0.0);
}

#[test]
fn triplet_losses_over_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, d) = (6, 3);
    let slice = randn(&mut rng, &[n, d]);
    let labels = [0, 0, 1, 1, 2, 2];
    let mut tape = Tape::new();
    let s = tape.constant(slice.clone());
    let single = soft_margin_triplet(&mut tape, s, &labels).unwrap().loss;
    // Three identical part slices.
    let parts: Vec<f64> = (0..n).flat_map(|i| slice.row(i).repeat(3)).collect();
    let p = tape.constant(Tensor::new(&[n, 3, d], parts).unwrap());
    let pair = triplet_losses(&mut tape, p, s, &labels).unwrap();
    assert!((tape.value(pair.part).item() - tape.value(single).item()).abs() < 1e-12);
    // K = 1 with coinciding part and global features.
    let p1 = tape.constant(slice.clone().reshape(&[n, 1, d]).unwrap());
    let pair = triplet_losses(&mut tape, p1, s, &labels).unwrap();
    assert_eq!(tape.value(pair.part).item(), tape.value(pair.global).item());
}

fn ce(logits: &[&[f64]], labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(&[logits.len(), logits[0].len()], logits.concat()).unwrap());
    let l = cross_entropy(&mut tape, v, labels).unwrap();
    tape.value(l).item()
}

#[test]
fn cross_entropy_examples() {
    assert!(ce(&[&[1e3, 0.0, 0.0], &[0.0, 1e3, 0.0]], &[0, 1]).abs() < 1e-12);
    assert!((ce(&[&[0.3; 4]], &[2]) - 4f64.ln()).abs() < 1e-12);
    // A true-class probability that underflows is clamped, not infinite.
    let l = ce(&[&[0.0, 1e4]], &[0]);
    assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
}

#[test]
fn classification_losses_hand_tables() {
    // Identity classifiers over log-probabilities reproduce the tables.
    let m = 3;
    let cls = Classifiers::new("cls", 2, m, m, m);
    let mut store = ParamStore::new();
    cls.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
    let eye = Tensor::from_fn(&[m, m], |i| f64::from(i / m == i % m));
    for name in ["cls.part0", "cls.part1", "cls.global"] {
        *store.param_mut(&format!("{name}.weight")).unwrap() = eye.clone();
    }
    let tables = [
        // target 0: part 0, part 1, global
        [[0.7, 0.2, 0.1], [0.5, 0.25, 0.25], [0.6, 0.3, 0.1]],
        // target 1
        [[0.1, 0.1, 0.8], [0.3, 0.3, 0.4], [0.2, 0.2, 0.6]],
    ];
    let labels = [0, 2];
    let parts: Vec<f64> = tables.iter().flat_map(|t| t[..2].concat()).map(f64::ln).collect();
    let global: Vec<f64> = tables.iter().flat_map(|t| t[2]).map(f64::ln).collect();
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let p = ctx.input(Tensor::new(&[2, 2, m], parts).unwrap());
    let g = ctx.input(Tensor::new(&[2, m], global).unwrap());
    let (lp, lg) = classification_losses(&mut ctx, &cls, p, g, &labels).unwrap();
    let want_p = -(0.7f64.ln() + 0.5f64.ln() + 0.8f64.ln() + 0.4f64.ln()) / 4.0;
    let want_g = -(0.6f64.ln() + 0.6f64.ln()) / 2.0;
    assert!((ctx.value(lp).item() - want_p).abs() <= 1e-12);
    assert!((ctx.value(lg).item() - want_g).abs() <= 1e-12);
}

fn div(parts: Vec<f64>, n: usize, k: usize, d: usize) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(&[n, k, d], parts).unwrap());
    let l = diversity_loss(&mut tape, v).unwrap();
    tape.value(l).item()
}

#[test]
fn diversity_examples() {
    let (k, d) = (6, 8);
    let collinear: Vec<f64> = (0..k)
        .flat_map(|i| (0..d).map(move |j| (i + 1) as f64 * (j as f64 - 2.5)))
        .collect();
    assert!((div(collinear, 1, k, d) - 1.0).abs() <= 1e-6);
    let orthogonal: Vec<f64> = (0..k).flat_map(|i| (0..d).map(move |j| f64::from(i == j))).collect();
    assert!(div(orthogonal, 1, k, d).abs() <= 1e-6);
    assert!((div(vec![1.0, -2.0, 3.0, -1.0, 2.0, -3.0], 1, 2, 3) + 1.0).abs() <= 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..2 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let base = div(x.clone(), 2, 4, 5);
    assert!((-1.0..=1.0).contains(&base));
    let scaled = div(x.iter().map(|v| v * 7.5).collect(), 2, 4, 5);
    assert!((base - scaled).abs() < 1e-12);
}

#[test]
fn total_loss_weights_and_recomposition() {
    let w = LossWeights::default();
    assert!((w.combine(1.0, 1.0, 1.0, 1.0, 1.0) - 8.6).abs() < 1e-12);
    assert_eq!(w.combine(0.0, 0.0, 0.0, 0.0, 0.0), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, k, dp, dg, m) = (6, 3, 4, 5, 3);
    let cls = Classifiers::new("cls", k, dp, dg, m);
    let mut store = ParamStore::new();
    cls.init(&mut store, &mut rng);
    let labels = [0, 1, 2, 0, 1, 2];
    let parts = randn(&mut rng, &[n, k, dp]);
    let global = randn(&mut rng, &[n, dg]);
    let mut ctx = Ctx::new(&store, Mode::Train);
    let p = ctx.input(parts.clone());
    let g = ctx.input(global.clone());
    let t = total_loss(&mut ctx, &cls, p, g, &labels, w).unwrap();
    let b = t.breakdown(&ctx.tape);

    // Components computed separately on a fresh tape.
    let mut ctx2 = Ctx::new(&store, Mode::Train);
    let p2 = ctx2.input(parts);
    let g2 = ctx2.input(global);
    let (cp, cg) = classification_losses(&mut ctx2, &cls, p2, g2, &labels).unwrap();
    let tri = triplet_losses(&mut ctx2.tape, p2, g2, &labels).unwrap();
    let dv = diversity_loss(&mut ctx2.tape, p2).unwrap();
    let v = |x: Var| ctx2.value(x).item();
    let manual = 3.0 * (v(cp) + v(tri.part)) + 0.3 * (v(cg) + v(tri.global)) + 2.0 * v(dv);
    assert!((b.total - manual).abs() <= 1e-9);
    assert_eq!(b.cls_part, v(cp));
    assert_eq!(b.diversity, v(dv));
}

// ---- roi_align ------------------------------------------------------------------------

fn roi(map: Tensor, r: Roi, out: (usize, usize), stride: f64) -> finetrack_core::Result<Tensor> {
    let mut tape = Tape::new();
    let m = tape.constant(map);
    let y = ops::roi_align(&mut tape, m, &[r], out, stride)?;
    Ok(tape.value(y).clone())
}

#[test]
fn roi_align_examples() {
    let b = |x1, y1, x2, y2| Roi {
        batch: 0,
        x1,
        y1,
        x2,
        y2,
    };
    let y = roi(Tensor::full(&[1, 2, 5, 5], 4.0), b(3.0, 5.0, 30.0, 33.0), (4, 2), 8.0).unwrap();
    assert_eq!(y.shape(), &[1, 2, 4, 2]);
    assert!(y.data().iter().all(|&v| v == 4.0));

    let ramp = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
    // Cell (2, 1) spans pixels [8, 16) x [16, 24) at stride 8.
    let y = roi(ramp.clone(), b(8.0, 16.0, 16.0, 24.0), (1, 1), 8.0).unwrap();
    assert_eq!(y.data(), &[9.0]);

    // Whole map into 2x2: cell centers land on feature coordinates 0.5 and
    // 2.5, each the average of a 2x2 block of the ramp.
    let y = roi(ramp.clone(), b(0.0, 0.0, 32.0, 32.0), (2, 2), 8.0).unwrap();
    let block = |r: usize, c: usize| {
        (ramp.data()[r * 4 + c]
            + ramp.data()[r * 4 + c + 1]
            + ramp.data()[(r + 1) * 4 + c]
            + ramp.data()[(r + 1) * 4 + c + 1])
            / 4.0
    };
    let want = [block(0, 0), block(0, 2), block(2, 0), block(2, 2)];
    for (g, w) in y.data().iter().zip(want) {
        assert!((g - w).abs() <= 1e-6);
    }
    assert!(roi(ramp.clone(), b(8.0, 8.0, 8.0, 20.0), (1, 1), 8.0).is_err());
    assert!(roi(ramp, b(8.0, 8.0, 20.0, 4.0), (1, 1), 8.0).is_err());
}
