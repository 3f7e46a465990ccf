//! The four commands: train, track, eval and demo.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use finetrack_core::geometry::BBox;
use finetrack_core::metrics::{clear_metrics, rank1_map, RetrievalScores, RetrievalSet, TrackingEval};
use finetrack_core::model::FineTrackModel;
use finetrack_core::nn::ParamStore;
use finetrack_core::synthetic_world::{degrade_detections, generate_sequence, Camera, FrameRecord, SceneScript};
use finetrack_core::tracker::{
    feature_distance, fused_distance, iou_distance, ByteTracker, Detection, TrackOutput, TrackerConfig,
};
use finetrack_core::train::{batch_targets, train, StepRecord, TrainConfig};

use crate::checkpoint;
use crate::config::{RunConfig, SceneKind, SequenceConfig};
use crate::mot_format;
use crate::report::{self, TrackingReport};
use crate::visualize;

/// SplitMix64 finalizer; derives independent seeds from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SGS: u64 = 2;
const STREAM_TRACK: u64 = 3;
const STREAM_DEGRADE: u64 = 4;
const STREAM_VIDEO: u64 = 1000;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes the fully resolved configuration next to a run's outputs.
fn write_resolved_config(config: &RunConfig, out: &Path) -> Result<()> {
    let mut resolved = config.clone();
    resolved.out = Some(out.to_path_buf());
    resolved.checkpoint = Some(config.checkpoint_path());
    write_file(&out.join("config.toml"), resolved.to_toml()?)
}

/// Imaging conditions of training video `video`.
pub fn video_camera(seed: u64, video: usize) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_VIDEO + 500 + video as u64));
    Camera {
        gain: [0; 3].map(|_| rng.gen_range(0.85..1.15)),
        background: rng.gen_range(90..=130),
        noise: rng.gen_range(6.0..12.0),
    }
}

/// The synthetic Re-ID videos: one lane scene per configured identity set,
/// each with its own camera, lanes rotated by video index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Vec<FrameRecord>>,
    pub train_frames: usize,
}

impl Dataset {
    pub fn train_views(&self) -> Vec<&[FrameRecord]> {
        self.videos.iter().map(|v| &v[..self.train_frames]).collect()
    }
}

pub fn desk_dataset(config: &RunConfig) -> Result<Dataset> {
    let data = &config.data;
    let videos = data
        .videos
        .iter()
        .enumerate()
        .map(|(v, ids)| {
            let mut script = SceneScript::lanes(
                ids,
                data.frames_per_video,
                derive_seed(config.seed, STREAM_VIDEO + v as u64),
            );
            let lanes = script.num_lanes();
            for a in &mut script.actors {
                a.lane = (a.lane + v) % lanes;
            }
            script.camera = video_camera(config.seed, v);
            Ok(generate_sequence(&script)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        videos,
        train_frames: data.train_frames(),
    })
}

/// Held-out retrieval split: held-out targets of even-numbered videos
/// query the held-out targets of odd-numbered videos, so every match is
/// across cameras.
pub fn retrieval_set(model: &FineTrackModel, store: &ParamStore, dataset: &Dataset) -> Result<RetrievalSet> {
    let mut set = RetrievalSet::default();
    for (v, video) in dataset.videos.iter().enumerate() {
        for chunk in video[dataset.train_frames..].chunks(8) {
            let frames: Vec<&FrameRecord> = chunk.iter().collect();
            let (targets, labels) = batch_targets(&frames);
            let e = model.embed(store, &frames, &targets)?;
            for (t, l) in e.targets.iter().zip(labels) {
                let (emb, lab) = if v % 2 == 0 {
                    (&mut set.query, &mut set.query_labels)
                } else {
                    (&mut set.gallery, &mut set.gallery_labels)
                };
                emb.push(t.association_vector());
                lab.push(l);
            }
        }
    }
    Ok(set)
}

pub fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: config.optim.epochs,
        batch: config.optim.batch,
        schedule: config.optim.schedule(),
        weights: config.loss.weights(),
        seed: derive_seed(config.seed, STREAM_SGS),
    }
}

/// Builds, initializes and trains the configured model in memory.
pub fn train_model(
    config: &RunConfig,
    dataset: &Dataset,
    on_step: impl FnMut(&StepRecord),
) -> Result<(FineTrackModel, ParamStore, Vec<StepRecord>)> {
    config.validate()?;
    let model = FineTrackModel::new(config.model_config())?;
    let mut store = model.init(derive_seed(config.seed, STREAM_INIT));
    let records = train(
        &model,
        &mut store,
        &dataset.train_views(),
        &train_config(config),
        on_step,
    )?;
    Ok((model, store, records))
}

fn loss_line(r: &StepRecord) -> String {
    serde_json::json!({
        "epoch": r.epoch,
        "step": r.step,
        "video": r.segment.video,
        "start": r.segment.start,
        "lr": r.lr,
        "cls_part": r.loss.cls_part,
        "tri_part": r.loss.tri_part,
        "cls_global": r.loss.cls_global,
        "tri_global": r.loss.tri_global,
        "diversity": r.loss.diversity,
        "total": r.loss.total,
    })
    .to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub retrieval: RetrievalScores,
}

/// Trains on the synthetic dataset and writes `checkpoint.safetensors`,
/// `loss_log.jsonl`, `reid_metrics.txt` and `config.toml`.
pub fn run_train(config: &RunConfig) -> Result<TrainSummary> {
    let out = config.out_dir();
    create_dir(&out)?;
    write_resolved_config(config, &out)?;
    let dataset = desk_dataset(config)?;
    let log_path = out.join("loss_log.jsonl");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err: Option<std::io::Error> = None;
    let (model, store, records) = train_model(config, &dataset, |r| {
        if log_err.is_none() {
            if let Err(e) = writeln!(log, "{}", loss_line(r)) {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    checkpoint::save(&config.checkpoint_path(), model.config(), &store)?;
    let set = retrieval_set(&model, &store, &dataset)?;
    let retrieval = rank1_map(&set)?;
    write_file(
        &out.join("reid_metrics.txt"),
        report::retrieval_key_values(&retrieval, set.query.len(), set.gallery.len()),
    )?;
    let (first_loss, last_loss) = match (records.first(), records.last()) {
        (Some(a), Some(b)) => (a.loss.total, b.loss.total),
        _ => (f64::NAN, f64::NAN),
    };
    Ok(TrainSummary {
        out,
        steps: records.len(),
        first_loss,
        last_loss,
        retrieval,
    })
}

/// Ground-truth frames of one configured tracking sequence.
pub fn sequence_frames(config: &RunConfig, seq: &SequenceConfig) -> Result<Vec<FrameRecord>> {
    let seed = derive_seed(derive_seed(config.seed, STREAM_TRACK), seq.seed);
    let script = match seq.kind {
        SceneKind::Lanes => SceneScript::lanes(&seq.identities, seq.frames, seed),
        SceneKind::Crossing => SceneScript::crossing(
            (seq.identities[0], seq.identities[1]),
            seq.style.context("crossing sequence needs a style")?.into(),
            seq.period.unwrap_or(54.0),
            seq.first_meet.unwrap_or(20),
            seq.frames,
            seed,
        ),
    };
    generate_sequence(&script).with_context(|| format!("generating sequence `{}`", seq.name))
}

/// Detections of one frame: every box with its confidence, and an
/// appearance descriptor for the high-confidence ones.
pub fn frame_detections(
    model: &FineTrackModel,
    store: &ParamStore,
    tracker: &TrackerConfig,
    frame: &FrameRecord,
) -> Result<Vec<Detection>> {
    let high: Vec<usize> = (0..frame.boxes.len())
        .filter(|&i| frame.confidences[i] >= tracker.high_threshold)
        .collect();
    let targets: Vec<(usize, BBox)> = high.iter().map(|&i| (0, frame.boxes[i])).collect();
    let embeddings = model.embed(store, &[frame], &targets)?;
    let mut dets: Vec<Detection> = frame
        .boxes
        .iter()
        .zip(&frame.confidences)
        .map(|(b, &c)| Detection {
            bbox: *b,
            confidence: c,
            embedding: None,
        })
        .collect();
    for (&i, t) in high.iter().zip(&embeddings.targets) {
        dets[i].embedding = Some(t.association_vector());
    }
    Ok(dets)
}

/// Runs the tracker over `detections` (frames of boxes and confidences)
/// and returns the output of every frame.
pub fn track_frames(
    model: &FineTrackModel,
    store: &ParamStore,
    tracker: TrackerConfig,
    detections: &[FrameRecord],
) -> Result<Vec<Vec<TrackOutput>>> {
    let mut byte = ByteTracker::new(tracker);
    detections
        .iter()
        .map(|f| {
            let dets = frame_detections(model, store, &tracker, f)?;
            Ok(byte.step(&dets)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSummary {
    pub out: PathBuf,
    pub sequences: Vec<(String, usize)>,
}

/// Synthesizes every configured sequence, tracks it with the checkpoint and
/// writes `gt/<name>.txt` and `results/<name>.txt`.
pub fn run_track(config: &RunConfig) -> Result<TrackSummary> {
    config.validate()?;
    let out = config.out_dir();
    let (model, store) = checkpoint::load(&config.checkpoint_path())?;
    let (gt_dir, res_dir) = (out.join("gt"), out.join("results"));
    create_dir(&gt_dir)?;
    create_dir(&res_dir)?;
    write_resolved_config(config, &out)?;
    let tracker = config.tracker.to_tracker_config();
    let mut sequences = Vec::new();
    for (k, seq) in config.track.sequences.iter().enumerate() {
        let frames = sequence_frames(config, seq)?;
        let detections = match seq.degraded {
            Some(d) => degrade_detections(&frames, d.into(), derive_seed(config.seed, STREAM_DEGRADE + k as u64))?,
            None => frames.clone(),
        };
        let outputs = track_frames(&model, &store, tracker, &detections)?;
        let mut text = String::new();
        for (f, o) in outputs.iter().enumerate() {
            if o.iter().any(|t| !t.bbox.to_tlwh().iter().all(|v| v.is_finite())) {
                bail!("non-finite track box in `{}` frame {}", seq.name, f + 1);
            }
            mot_format::append_results(&mut text, f, o);
        }
        write_file(
            &gt_dir.join(format!("{}.txt", seq.name)),
            mot_format::ground_truth_text(&frames),
        )?;
        write_file(&res_dir.join(format!("{}.txt", seq.name)), text)?;
        if config.track.write_images {
            let dir = out.join("frames").join(&seq.name);
            create_dir(&dir)?;
            for f in &frames {
                visualize::save_frame(&dir.join(format!("{:06}.png", f.index + 1)), f, &[])?;
            }
        }
        sequences.push((seq.name.clone(), outputs.iter().map(Vec::len).sum()));
    }
    Ok(TrackSummary { out, sequences })
}

/// Scores every `*.txt` ground-truth file against the result file of the
/// same name and writes `report.txt` and `metrics.txt`.
pub fn run_eval(config: &RunConfig) -> Result<TrackingReport> {
    let out = config.out_dir();
    let gt_dir = config.eval.gt_dir.clone().unwrap_or_else(|| out.join("gt"));
    let res_dir = config.eval.results_dir.clone().unwrap_or_else(|| out.join("results"));
    let mut names: Vec<String> = fs::read_dir(&gt_dir)
        .with_context(|| format!("listing {}", gt_dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "txt")).then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    names.sort();
    let mut sequences = Vec::new();
    for name in names {
        let gt = mot_format::read_annotations(&gt_dir.join(format!("{name}.txt")))?;
        if gt.is_empty() {
            eprintln!("skipping `{name}`: no ground-truth rows");
            continue;
        }
        let res_path = res_dir.join(format!("{name}.txt"));
        if !res_path.exists() {
            bail!("no result file {} for ground truth `{name}`", res_path.display());
        }
        let hyp = mot_format::read_annotations(&res_path)?;
        let m = clear_metrics(&TrackingEval::new(gt, hyp)).with_context(|| format!("evaluating `{name}`"))?;
        sequences.push((name, m));
    }
    if sequences.is_empty() {
        bail!("no ground-truth sequences with rows in {}", gt_dir.display());
    }
    let report = TrackingReport { sequences };
    create_dir(&out)?;
    write_resolved_config(config, &out)?;
    write_file(&out.join("report.txt"), report.table())?;
    write_file(&out.join("metrics.txt"), report.key_values())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Writes the sampled frame, each target's part and global masks and flow
/// fields, and the distance matrices between the previous and the sampled
/// frame as images under `<out>/demo`.
pub fn run_demo(config: &RunConfig) -> Result<DemoSummary> {
    config.validate()?;
    let out = config.out_dir();
    let dir = out.join("demo");
    create_dir(&dir)?;
    write_resolved_config(config, &out)?;
    let (model, store) = checkpoint::load(&config.checkpoint_path())?;
    let seq = config
        .track
        .sequences
        .iter()
        .find(|s| s.name == config.demo.sequence)
        .with_context(|| format!("demo sequence `{}` not among [track] sequences", config.demo.sequence))?;
    let frames = sequence_frames(config, seq)?;
    let t = config.demo.frame;
    if t == 0 || t >= frames.len() {
        bail!("demo frame {t} must lie in 1..{} of `{}`", frames.len(), seq.name);
    }
    let scale = config.demo.scale;
    let (prev, cur) = (&frames[t - 1], &frames[t]);
    let mut files = Vec::new();
    let mut emit = |name: String| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };

    visualize::save_frame(&emit("frame.png".into()), cur, &cur.boxes)?;
    let targets: Vec<(usize, BBox)> = cur.boxes.iter().map(|&b| (0, b)).collect();
    let emb = model.embed(&store, &[cur], &targets)?;
    if let Some(m) = &emb.masks {
        let (_, k, h, w) = m.part.dims4()?;
        for (j, &id) in cur.ids.iter().enumerate() {
            for part in 0..k {
                let off = (j * k + part) * h * w;
                let p = emit(format!("id{id}_part{part}.png"));
                visualize::save_mask(&p, &m.part.data()[off..off + h * w], h, w, scale)?;
            }
            let p = emit(format!("id{id}_global.png"));
            visualize::save_mask(&p, &m.global.data()[j * h * w..(j + 1) * h * w], h, w, scale)?;
        }
    }
    for (s, flow) in emb.flows.iter().enumerate() {
        let (_, _, h, w) = flow.dims4()?;
        for (j, &id) in cur.ids.iter().enumerate() {
            let base = j * 4 * h * w;
            let fine = emit(format!("id{id}_flow{s}_fine.png"));
            visualize::save_flow(&fine, &flow.data()[base..base + 2 * h * w], h, w, scale)?;
            let coarse = emit(format!("id{id}_flow{s}_coarse.png"));
            visualize::save_flow(&coarse, &flow.data()[base + 2 * h * w..base + 4 * h * w], h, w, scale)?;
        }
    }

    let prev_targets: Vec<(usize, BBox)> = prev.boxes.iter().map(|&b| (0, b)).collect();
    let prev_emb = model.embed(&store, &[prev], &prev_targets)?;
    let a: Vec<Vec<f64>> = prev_emb.targets.iter().map(|e| e.association_vector()).collect();
    let b: Vec<Vec<f64>> = emb.targets.iter().map(|e| e.association_vector()).collect();
    let d = fused_distance(&feature_distance(&a, &b), &iou_distance(&prev.boxes, &cur.boxes))?;
    let mut text = String::new();
    for (name, m) in [
        ("feature", &d.feature),
        ("iou", &d.iou),
        ("gated_feature", &d.gated_feature),
        ("fused", &d.fused),
    ] {
        let p = emit(format!("distance_{name}.png"));
        visualize::save_heatmap(&p, m.data(), m.rows(), m.cols(), scale * 4)?;
        text.push_str(&format!(
            "[{name}] rows = ids {:?} at frame {}, cols = ids {:?} at frame {}\n",
            prev.ids,
            t,
            cur.ids,
            t + 1
        ));
        for r in 0..m.rows() {
            let row: Vec<String> = (0..m.cols()).map(|c| format!("{:.6}", m.get(r, c))).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
    }
    let p = emit("distances.txt".into());
    write_file(&p, text)?;
    Ok(DemoSummary { dir, files })
}
