//! Training losses: batch-hard soft-margin triplet, part/global
//! classification, part diversity and their weighted combination.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{join, Ctx, Linear, ParamStore};
use crate::ops;
use crate::tensor::Tensor;

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Norm floor in the cosine similarities of the diversity loss.
pub const NORM_FLOOR: f64 = 1e-12;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Hardest positive and negative chosen for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub d_ap: f64,
    pub d_an: f64,
}

/// Batch-hard mining over Euclidean distances. Anchors without a positive
/// or a negative are skipped.
pub fn mine_hard_triplets(feats: &Tensor, labels: &[usize]) -> Result<Vec<HardTriplet>> {
    let (n, _) = feats.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(
            "triplet",
            alloc::format!("{} labels for {} embeddings", labels.len(), n),
        ));
    }
    let mut out = Vec::new();
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = euclidean(feats.row(a), feats.row(j));
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        if let (Some((positive, d_ap)), Some((negative, d_an))) = (pos, neg) {
            out.push(HardTriplet {
                anchor: a,
                positive,
                negative,
                d_ap,
                d_an,
            });
        }
    }
    Ok(out)
}

struct TripletLoss {
    feats: Var,
    triplets: Vec<HardTriplet>,
}

impl GradFn for TripletLoss {
    fn inputs(&self) -> Vec<Var> {
        vec![self.feats]
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.feats);
        let mut gx = Tensor::zeros(x.shape());
        if self.triplets.is_empty() {
            return vec![Some(gx)];
        }
        let d = x.shape()[1];
        let scale = g.item() / self.triplets.len() as f64;
        for t in &self.triplets {
            let s = scale * ops::sigmoid_value(t.d_ap - t.d_an);
            // d/dx of +d_ap and -d_an
            for (other, dist, sign) in [(t.positive, t.d_ap, 1.0), (t.negative, t.d_an, -1.0)] {
                if dist == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let unit = (x.row(t.anchor)[c] - x.row(other)[c]) / dist;
                    gx.data_mut()[t.anchor * d + c] += sign * s * unit;
                    gx.data_mut()[other * d + c] -= sign * s * unit;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Result of [`soft_margin_triplet`].
#[derive(Debug, Clone, Copy)]
pub struct TripletOutput {
    pub loss: Var,
    pub valid_anchors: usize,
}

impl TripletOutput {
    /// No anchor had both a positive and a negative; the loss is zero and
    /// the batch composition should be checked.
    pub fn degenerate(&self) -> bool {
        self.valid_anchors == 0
    }
}

/// Mean over valid anchors of `softplus(d_ap − d_an)` with batch-hard
/// mining on `(N, D)` features.
pub fn soft_margin_triplet(tape: &mut Tape, feats: Var, labels: &[usize]) -> Result<TripletOutput> {
    let triplets = mine_hard_triplets(tape.value(feats), labels)?;
    let value = if triplets.is_empty() {
        0.0
    } else {
        triplets.iter().map(|t| softplus(t.d_ap - t.d_an)).sum::<f64>() / triplets.len() as f64
    };
    let valid_anchors = triplets.len();
    let loss = tape.push(Tensor::scalar(value), TripletLoss { feats, triplets });
    Ok(TripletOutput { loss, valid_anchors })
}

struct CrossEntropy {
    logits: Var,
    labels: Vec<usize>,
    probs: Tensor,
}

impl GradFn for CrossEntropy {
    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(&self, _: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (n, m) = self.probs.dims2().expect("2-D");
        let scale = g.item() / n as f64;
        let mut gl = Tensor::zeros(&[n, m]);
        for (i, &y) in self.labels.iter().enumerate() {
            let p = self.probs.row(i);
            if p[y] < PROB_FLOOR {
                continue;
            }
            for j in 0..m {
                let onehot = if j == y { 1.0 } else { 0.0 };
                gl.data_mut()[i * m + j] = scale * (p[j] - onehot);
            }
        }
        vec![Some(gl)]
    }
}

/// Row softmax of `(N, M)` logits.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, m) = logits.dims2()?;
    let mut p = logits.clone();
    p.data_mut().chunks_mut(m).for_each(ops::softmax_in_place);
    Ok(p)
}

/// `−(1/N) Σ_n log max(softmax(z_n)[y_n], 1e-12)`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, m) = tape.value(logits).dims2()?;
    if labels.len() != n || labels.iter().any(|&y| y >= m) {
        return Err(Error::invalid(
            "labels",
            alloc::format!("{} labels over {} classes for {} rows", labels.len(), m, n),
        ));
    }
    let probs = softmax_rows(tape.value(logits))?;
    let value = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -libm::log(probs.row(i)[y].max(PROB_FLOOR)))
        .sum::<f64>()
        / n as f64;
    Ok(tape.push(
        Tensor::scalar(value),
        CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        },
    ))
}

struct Diversity {
    parts: Var,
}

fn norm_floor(v: &[f64]) -> (f64, bool) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum());
    if n < NORM_FLOOR {
        (NORM_FLOOR, true)
    } else {
        (n, false)
    }
}

impl GradFn for Diversity {
    fn inputs(&self) -> Vec<Var> {
        vec![self.parts]
    }

    fn backward(&self, tape: &Tape, _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.parts);
        let (n, k, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let scale = g.item() / (n * k * (k - 1)) as f64;
        let mut gx = Tensor::zeros(x.shape());
        for b in 0..n {
            let slab = x.slab(b);
            let vecs: Vec<&[f64]> = slab.chunks(d).collect();
            let norms: Vec<(f64, bool)> = vecs.iter().map(|v| norm_floor(v)).collect();
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    // Each ordered pair (i, j) and (j, i) holds the same
                    // cosine, so a_i collects twice the partial derivative.
                    let (ni, clamped) = norms[i];
                    let nj = norms[j].0;
                    let dotp: f64 = vecs[i].iter().zip(vecs[j]).map(|(a, b)| a * b).sum();
                    let cos = dotp / (ni * nj);
                    for c in 0..d {
                        let mut dc = vecs[j][c] / (ni * nj);
                        if !clamped {
                            dc -= cos * vecs[i][c] / (ni * ni);
                        }
                        gx.data_mut()[(b * k + i) * d + c] += 2.0 * scale * dc;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Mean cosine similarity over ordered pairs of distinct parts of the same
/// target, for `(N, K, D)` part features.
pub fn diversity_loss(tape: &mut Tape, parts: Var) -> Result<Var> {
    let shape = tape.shape(parts).to_vec();
    if shape.len() != 3 || shape[1] < 2 {
        return Err(Error::invalid(
            "diversity input",
            alloc::format!("need (N, K>=2, D), got {:?}", shape),
        ));
    }
    let (n, k, d) = (shape[0], shape[1], shape[2]);
    let x = tape.value(parts);
    let mut total = 0.0;
    for b in 0..n {
        let vecs: Vec<&[f64]> = x.slab(b).chunks(d).collect();
        let norms: Vec<f64> = vecs.iter().map(|v| norm_floor(v).0).collect();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let dotp: f64 = vecs[i].iter().zip(vecs[j]).map(|(a, b)| a * b).sum();
                    total += dotp / (norms[i] * norms[j]);
                }
            }
        }
    }
    let value = total / (n * k * (k - 1)) as f64;
    Ok(tape.push(Tensor::scalar(value), Diversity { parts }))
}

/// Part-level and global triplet losses.
#[derive(Debug, Clone, Copy)]
pub struct TripletPair {
    pub part: Var,
    pub global: Var,
    /// True when any slice had no valid anchor.
    pub degenerate: bool,
}

/// `L_tri_p` averages the triplet loss over the K part slices of `(N, K, D)`
/// part features; `L_tri_g` is the triplet loss of `(N, D_g)` global ones.
pub fn triplet_losses(tape: &mut Tape, parts: Var, global: Var, labels: &[usize]) -> Result<TripletPair> {
    let shape = tape.shape(parts).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("triplet_losses", "part features must be (N, K, D)"));
    }
    let (n, k, d) = (shape[0], shape[1], shape[2]);
    let mut degenerate = false;
    let mut acc: Option<Var> = None;
    for i in 0..k {
        let slice = ops::narrow(tape, parts, 1, i, 1)?;
        let slice = ops::reshape(tape, slice, &[n, d])?;
        let t = soft_margin_triplet(tape, slice, labels)?;
        degenerate |= t.degenerate();
        acc = Some(match acc {
            None => t.loss,
            Some(a) => ops::add(tape, a, t.loss)?,
        });
    }
    let part = ops::scale(tape, acc.expect("K >= 1"), 1.0 / k as f64);
    let g = soft_margin_triplet(tape, global, labels)?;
    Ok(TripletPair {
        part,
        global: g.loss,
        degenerate: degenerate || g.degenerate(),
    })
}

/// K part classifiers and one global classifier, each a linear layer whose
/// softmax gives the identity distribution.
#[derive(Debug, Clone)]
pub struct Classifiers {
    parts: Vec<Linear>,
    global: Linear,
    identities: usize,
}

impl Classifiers {
    pub fn new(name: &str, parts: usize, part_dim: usize, global_dim: usize, identities: usize) -> Self {
        Classifiers {
            parts: (0..parts)
                .map(|k| Linear::new(join(name, &alloc::format!("part{k}")), part_dim, identities))
                .collect(),
            global: Linear::new(join(name, "global"), global_dim, identities),
            identities,
        }
    }

    pub fn identities(&self) -> usize {
        self.identities
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for p in &self.parts {
            p.init(store, rng);
        }
        self.global.init(store, rng);
    }

    /// Logits of part `k` for `(N, D_p)` features.
    pub fn part_logits(&self, ctx: &mut Ctx<'_>, k: usize, feats: Var) -> Result<Var> {
        self.parts[k].forward(ctx, feats)
    }

    pub fn global_logits(&self, ctx: &mut Ctx<'_>, feats: Var) -> Result<Var> {
        self.global.forward(ctx, feats)
    }
}

/// `(L_cls_p, L_cls_g)`: cross-entropy averaged over the K part
/// classifiers and targets, and over targets for the global classifier.
pub fn classification_losses(
    ctx: &mut Ctx<'_>,
    classifiers: &Classifiers,
    parts: Var,
    global: Var,
    labels: &[usize],
) -> Result<(Var, Var)> {
    let shape = ctx.tape.shape(parts).to_vec();
    let (n, k, d) = (shape[0], shape[1], shape[2]);
    if k != classifiers.parts.len() {
        return Err(Error::shape(
            "classification_losses",
            "part count differs from classifier count",
        ));
    }
    let mut acc: Option<Var> = None;
    for i in 0..k {
        let slice = ops::narrow(&mut ctx.tape, parts, 1, i, 1)?;
        let slice = ops::reshape(&mut ctx.tape, slice, &[n, d])?;
        let logits = classifiers.part_logits(ctx, i, slice)?;
        let ce = cross_entropy(&mut ctx.tape, logits, labels)?;
        acc = Some(match acc {
            None => ce,
            Some(a) => ops::add(&mut ctx.tape, a, ce)?,
        });
    }
    let part = ops::scale(&mut ctx.tape, acc.expect("K >= 1"), 1.0 / k as f64);
    let logits = classifiers.global_logits(ctx, global)?;
    let global = cross_entropy(&mut ctx.tape, logits, labels)?;
    Ok((part, global))
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Part terms.
    pub alpha: f64,
    /// Global terms.
    pub beta: f64,
    /// Diversity.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 3.0,
            beta: 0.3,
            gamma: 2.0,
        }
    }
}

/// The five loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cls_part: f64,
    pub tri_part: f64,
    pub cls_global: f64,
    pub tri_global: f64,
    pub diversity: f64,
    pub total: f64,
}

impl LossWeights {
    /// `α(L_cls_p + L_tri_p) + β(L_cls_g + L_tri_g) + γ·L_div` on plain numbers.
    pub fn combine(&self, cls_part: f64, tri_part: f64, cls_global: f64, tri_global: f64, diversity: f64) -> f64 {
        self.alpha * (cls_part + tri_part) + self.beta * (cls_global + tri_global) + self.gamma * diversity
    }
}

/// Tape handles of every component plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct TotalLoss {
    pub total: Var,
    pub cls_part: Var,
    pub tri_part: Var,
    pub cls_global: Var,
    pub tri_global: Var,
    pub diversity: Var,
    pub triplet_degenerate: bool,
}

impl TotalLoss {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            cls_part: v(self.cls_part),
            tri_part: v(self.tri_part),
            cls_global: v(self.cls_global),
            tri_global: v(self.tri_global),
            diversity: v(self.diversity),
            total: v(self.total),
        }
    }
}

/// Every component and the weighted total for one batch of `(N, K, D_p)`
/// part and `(N, D_g)` global embeddings.
pub fn total_loss(
    ctx: &mut Ctx<'_>,
    classifiers: &Classifiers,
    parts: Var,
    global: Var,
    labels: &[usize],
    weights: LossWeights,
) -> Result<TotalLoss> {
    let (cls_part, cls_global) = classification_losses(ctx, classifiers, parts, global, labels)?;
    let tri = triplet_losses(&mut ctx.tape, parts, global, labels)?;
    let diversity = diversity_loss(&mut ctx.tape, parts)?;
    let t = &mut ctx.tape;
    let part_sum = ops::add(t, cls_part, tri.part)?;
    let global_sum = ops::add(t, cls_global, tri.global)?;
    let a = ops::scale(t, part_sum, weights.alpha);
    let b = ops::scale(t, global_sum, weights.beta);
    let c = ops::scale(t, diversity, weights.gamma);
    let ab = ops::add(t, a, b)?;
    let total = ops::add(t, ab, c)?;
    Ok(TotalLoss {
        total,
        cls_part,
        tri_part: tri.part,
        cls_global,
        tri_global: tri.global,
        diversity,
        triplet_degenerate: tri.degenerate,
    })
}
