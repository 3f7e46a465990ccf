use finetrack_core::model::{FineTrackModel, ModelConfig, Variant};
use finetrack_core::objectives::LossWeights;
use finetrack_core::optim::StepDecay;
use finetrack_core::sampling::SgsSchedule;
use finetrack_core::synthetic_world::{
    degrade_detections, generate_sequence, CrossingStyle, DetectionNoise, FrameRecord, SceneScript,
};
use finetrack_core::train::{batch_targets, train, TrainConfig};

fn max_pair_iou(frames: &[FrameRecord]) -> f64 {
    frames
        .iter()
        .flat_map(|f| {
            let b = &f.boxes;
            (0..b.len()).flat_map(move |i| ((i + 1)..b.len()).map(move |j| b[i].iou(&b[j])))
        })
        .fold(0.0, f64::max)
}

#[test]
fn lanes_never_overlap() {
    for seed in 0..5 {
        let frames = generate_sequence(&SceneScript::lanes(&[0, 1, 2, 3], 120, seed)).unwrap();
        assert_eq!(max_pair_iou(&frames), 0.0);
        assert!(frames.iter().all(|f| f.visibility.iter().all(|&v| v == 1.0)));
    }
}

#[test]
fn crossings_overlap_at_every_meeting() {
    for style in [CrossingStyle::PassThrough, CrossingStyle::Bounce] {
        let (period, first_meet) = (54.0, 20);
        let frames = generate_sequence(&SceneScript::crossing((0, 3), style, period, first_meet, 80, 9)).unwrap();
        let at_meet = frames[first_meet].boxes[0].iou(&frames[first_meet].boxes[1]);
        assert!(at_meet > 0.3, "{style:?}: IoU {at_meet} at first meeting");
        let second = first_meet + (period / 2.0) as usize;
        let window = &frames[second - 1..=second + 1];
        assert!(max_pair_iou(window) > 0.3, "{style:?}: no overlap near frame {second}");
        // Well away from a meeting the pair is apart.
        let apart = &frames[first_meet + 13];
        assert_eq!(apart.boxes[0].iou(&apart.boxes[1]), 0.0);
    }
}

#[test]
fn generation_is_deterministic() {
    let script = SceneScript::lanes(&[1, 2], 10, 3);
    assert_eq!(generate_sequence(&script).unwrap(), generate_sequence(&script).unwrap());
    let noise = DetectionNoise {
        box_jitter: 2.0,
        low_fraction: 0.3,
    };
    let frames = generate_sequence(&script).unwrap();
    assert_eq!(
        degrade_detections(&frames, noise, 5).unwrap(),
        degrade_detections(&frames, noise, 5).unwrap()
    );
    assert_ne!(
        degrade_detections(&frames, noise, 5).unwrap(),
        degrade_detections(&frames, noise, 6).unwrap()
    );
}

#[test]
fn sgs_batches_are_consecutive_single_video_with_positives() {
    let videos: Vec<Vec<FrameRecord>> = [(vec![0, 1, 2], 40), (vec![2, 3], 35), (vec![4, 5, 6, 7], 50)]
        .iter()
        .enumerate()
        .map(|(v, (ids, n))| generate_sequence(&SceneScript::lanes(ids, *n, v as u64)).unwrap())
        .collect();
    let lengths: Vec<usize> = videos.iter().map(Vec::len).collect();
    let schedule = SgsSchedule::new(&lengths, 8, 17).unwrap();
    assert_eq!(schedule.segments.len(), 5 + 4 + 6);
    for epoch in 0..4 {
        let order = schedule.epoch(epoch);
        assert_eq!(order, SgsSchedule::new(&lengths, 8, 17).unwrap().epoch(epoch));
        for seg in &order {
            let frames: Vec<&FrameRecord> = videos[seg.video][seg.frames()].iter().collect();
            assert_eq!(frames.len(), 8);
            assert!(frames.windows(2).all(|w| w[1].index == w[0].index + 1));
            let (_, labels) = batch_targets(&frames);
            let positive = (0..labels.len()).any(|i| labels[i + 1..].contains(&labels[i]));
            assert!(positive, "segment {seg:?} has no positive pair");
        }
    }
}

#[test]
fn short_training_run_lowers_the_loss() {
    let frames = generate_sequence(&SceneScript::lanes(&[0, 1], 16, 2)).unwrap();
    let model = FineTrackModel::new(ModelConfig {
        unified_channels: 12,
        part_dim: 8,
        global_dim: 16,
        identities: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut store = model.init(1);
    let cfg = TrainConfig {
        epochs: 6,
        batch: 8,
        schedule: StepDecay {
            base: 1e-3,
            factor: 0.1,
            milestones: vec![],
        },
        weights: LossWeights::default(),
        seed: 4,
    };
    let records = train(&model, &mut store, &[&frames], &cfg, |_| {}).unwrap();
    assert_eq!(records.len(), 6 * 2);
    let first = records[0].loss.total + records[1].loss.total;
    let last = records[10].loss.total + records[11].loss.total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn baseline_has_no_parts_or_flows() {
    let frames = generate_sequence(&SceneScript::lanes(&[0, 1], 2, 2)).unwrap();
    let model = FineTrackModel::new(ModelConfig {
        variant: Variant::Baseline,
        unified_channels: 12,
        part_dim: 8,
        global_dim: 16,
        identities: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let store = model.init(0);
    let refs: Vec<&FrameRecord> = frames.iter().collect();
    let (targets, _) = batch_targets(&refs);
    let e = model.embed(&store, &refs, &targets).unwrap();
    assert_eq!(e.targets.len(), 4);
    assert!(e.targets.iter().all(|t| t.parts.is_empty() && t.global.len() == 16));
    assert!(e.masks.is_none() && e.flows.is_empty());
}

#[test]
fn epoch_visits_every_retained_frame_once() {
    use finetrack_core::sampling::{build_segments, epoch_order};
    let segments = build_segments(&[37, 16, 5, 24], 8).unwrap();
    let mut seen: Vec<(usize, usize)> = epoch_order(&segments, 3)
        .iter()
        .flat_map(|s| s.frames().map(move |f| (s.video, f)))
        .collect();
    seen.sort_unstable();
    let want: Vec<(usize, usize)> = [(0, 32), (1, 16), (3, 24)]
        .iter()
        .flat_map(|&(v, n)| (0..n).map(move |f| (v, f)))
        .collect();
    assert_eq!(seen, want);
    let one = build_segments(&[8], 8).unwrap();
    assert_eq!(epoch_order(&one, 99), one);
}
