//! Training loop: SGS batches of consecutive frames, ground-truth boxes as
//! ROIs, one Adam step per batch.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::FineTrackModel;
use crate::nn::{Ctx, Mode, ParamStore, BN_MOMENTUM};
use crate::objectives::{LossBreakdown, LossWeights};
use crate::optim::{Adam, StepDecay};
use crate::sampling::{Segment, SgsSchedule};
use crate::synthetic_world::FrameRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: StepDecay,
    pub weights: LossWeights,
    pub seed: u64,
}

/// One optimizer step's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub segment: Segment,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Every labeled box of `frames` as `(frame position, box)` with its
/// identity label.
pub fn batch_targets(frames: &[&FrameRecord]) -> (Vec<(usize, BBox)>, Vec<usize>) {
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        for (b, &id) in f.boxes.iter().zip(&f.ids) {
            targets.push((i, *b));
            labels.push(id);
        }
    }
    (targets, labels)
}

/// Forward, backward and one Adam step on a batch of frames; returns the
/// loss before the update.
pub fn train_step(
    model: &FineTrackModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    frames: &[&FrameRecord],
    lr: f64,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let (targets, labels) = batch_targets(frames);
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.config().identities) {
        return Err(Error::invalid(
            "training labels",
            alloc::format!(
                "identity {bad} outside the {} classifier outputs",
                model.config().identities
            ),
        ));
    }
    let crops = model.crops(store, frames, &targets)?;
    let (loss, grads, stats) = {
        let mut ctx = Ctx::new(store, Mode::Train);
        let vars: Vec<_> = crops.into_iter().map(|c| ctx.input(c)).collect();
        let out = model.forward(&mut ctx, &vars)?;
        let loss = model.loss(&mut ctx, &out, &labels, weights)?;
        let grads = ctx.param_grads(loss.total);
        (loss, grads, ctx.batch_stats().to_vec())
    };
    if !loss.breakdown.total.is_finite() {
        return Err(Error::NonFinite { what: "training loss" });
    }
    if grads.values().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite { what: "gradient" });
    }
    adam.step(store, &grads, lr)?;
    store.apply_batch_stats(&stats, BN_MOMENTUM);
    Ok(loss.breakdown)
}

/// Runs `config.epochs` SGS epochs over `videos`, calling `on_step` after
/// every step. Fails with the step index on a non-finite loss.
pub fn train(
    model: &FineTrackModel,
    store: &mut ParamStore,
    videos: &[&[FrameRecord]],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    let lengths: Vec<usize> = videos.iter().map(|v| v.len()).collect();
    let schedule = SgsSchedule::new(&lengths, config.batch, config.seed)?;
    let mut adam = Adam::default();
    let mut records = Vec::new();
    for epoch in 0..config.epochs {
        let lr = config.schedule.at(epoch);
        for segment in schedule.epoch(epoch) {
            let frames: Vec<&FrameRecord> = videos[segment.video][segment.frames()].iter().collect();
            let step = records.len();
            let loss = train_step(model, store, &mut adam, &frames, lr, config.weights).map_err(|e| match e {
                Error::NonFinite { what } => {
                    Error::invalid("training", alloc::format!("non-finite {what} at step {step}"))
                }
                other => other,
            })?;
            let record = StepRecord {
                epoch,
                step,
                segment,
                lr,
                loss,
            };
            on_step(&record);
            records.push(record);
        }
    }
    Ok(records)
}
